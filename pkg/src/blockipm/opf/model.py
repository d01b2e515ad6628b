"""Stochastic block AC-OPF in polar form.

Each scenario is one block.  Controls ``u`` are the active powers of all
generators except the one balancing the reference bus, plus the voltage
magnitudes of generator buses.  States ``x_i`` are the voltage angles of the
non-reference buses and the voltage magnitudes of the remaining buses.

    g_i : active balance at non-reference buses, reactive balance at
          non-generator buses
    h_i : |S_f|^2 and |S_t|^2 per branch, reactive output per generator bus,
          active output of the balancing generator
    f_i : (1/N) * generation cost

The balancing generator's active power and the generator reactive powers are
not variables: they are linear functions of the basis (what is left over in
the corresponding balance equation) and are bounded through ``h``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..autodiff.dual import cos, sin, spmm, vstack
from ..model import BlockDims, BlockNlp
from .matpower import CaseData
from .scenarios import ScenarioSet, generate_scenarios, is_connected, DisconnectedNetwork


def reduced_matrix_bytes(n_u: int, element_size: int = 8) -> int:
    """Storage of the dense reduced matrix."""
    if n_u < 0:
        raise ValueError("n_u must be non-negative")
    return int(n_u) * int(n_u) * int(element_size)


@dataclass(frozen=True)
class OpfVariableMap:
    n_bus: int
    ref: int
    gen_bus: np.ndarray        # generator buses, ascending
    nongen_bus: np.ndarray
    nonref_bus: np.ndarray
    ref_gen: int               # generator whose active power balances the reference bus
    ctrl_gen: np.ndarray       # generators with active power in u

    @property
    def n_x(self) -> int:
        return self.nonref_bus.size + self.nongen_bus.size

    @property
    def n_u(self) -> int:
        return self.ctrl_gen.size + self.gen_bus.size

    @property
    def n_d(self) -> int:
        return self.n_x + self.n_u

    # positions inside d = (x, u)
    def va_index(self) -> dict:
        return {int(b): k for k, b in enumerate(self.nonref_bus)}

    def vm_index(self) -> dict:
        out = {int(b): self.nonref_bus.size + k for k, b in enumerate(self.nongen_bus)}
        base = self.n_x + self.ctrl_gen.size
        out.update({int(b): base + k for k, b in enumerate(self.gen_bus)})
        return out

    def pg_index(self) -> dict:
        return {int(g): self.n_x + k for k, g in enumerate(self.ctrl_gen)}

    def labels(self) -> list:
        va = [f"Va[{b}]" for b in self.nonref_bus]
        vmx = [f"Vm[{b}]" for b in self.nongen_bus]
        pg = [f"Pg[{g}]" for g in self.ctrl_gen]
        vmu = [f"Vm[{b}]" for b in self.gen_bus]
        return va + vmx + pg + vmu


def variable_map(case: CaseData) -> OpfVariableMap:
    """Split of the polar variables into states and controls (in-service elements only)."""
    case = case.in_service()
    idx = case.bus_index()
    ref = case.ref_bus()
    gen_bus_of = np.array([idx[int(b)] for b in case.gen[:, 0]], dtype=np.int64)
    gen_bus = np.unique(gen_bus_of)
    at_ref = np.flatnonzero(gen_bus_of == ref)
    if at_ref.size == 0:
        raise ValueError("the reference bus has no in-service generator")
    ref_gen = int(at_ref[0])
    buses = np.arange(case.n_bus)
    return OpfVariableMap(
        n_bus=case.n_bus, ref=ref, gen_bus=gen_bus,
        nongen_bus=np.setdiff1d(buses, gen_bus), nonref_bus=buses[buses != ref],
        ref_gen=ref_gen, ctrl_gen=np.array([g for g in range(case.n_gen) if g != ref_gen], dtype=np.int64),
    )


def inequality_count(case: CaseData) -> int:
    vm = variable_map(case)
    return 2 * case.in_service().n_branch + vm.gen_bus.size + 1


def opf_dims(case: CaseData, N: int) -> dict:
    """Dimension table of the block OPF with ``N`` scenarios (no model is built)."""
    if N < 1:
        raise ValueError("N must be >= 1")
    vm = variable_map(case)
    m = inequality_count(case)
    on = case.in_service()
    nvar = N * vm.n_x + vm.n_u
    return {
        "case": case.name, "N": N, "buses": case.n_bus, "lines": on.n_branch, "gens": on.n_gen,
        "n_x": vm.n_x, "n_u": vm.n_u, "m": m, "nvar": nvar, "ncon": N * (vm.n_x + m),
        "khat_bytes": reduced_matrix_bytes(vm.n_u), "khat_mib": reduced_matrix_bytes(vm.n_u) / 2**20,
    }


# ---------------------------------------------------------------------------
# network data in per unit

@dataclass(frozen=True)
class Network:
    base: float
    f: np.ndarray
    t: np.ndarray
    Gff: np.ndarray
    Bff: np.ndarray
    Gft: np.ndarray
    Bft: np.ndarray
    Gtf: np.ndarray
    Btf: np.ndarray
    Gtt: np.ndarray
    Btt: np.ndarray
    Gs: np.ndarray
    Bs: np.ndarray
    Pd: np.ndarray
    Qd: np.ndarray
    rate2: np.ndarray     # (rateA/base)^2, inf when unlimited
    gen_bus: np.ndarray
    Pmin: np.ndarray
    Pmax: np.ndarray
    Qmin: np.ndarray
    Qmax: np.ndarray
    cost: np.ndarray      # (n_gen, 3): c2, c1, c0 per MW-based polynomial
    Vmin: np.ndarray
    Vmax: np.ndarray
    Vm0: np.ndarray
    Va0: np.ndarray
    Pg0: np.ndarray

    @property
    def n_bus(self):
        return self.Gs.size

    @property
    def n_line(self):
        return self.f.size


def branch_admittances(branch: np.ndarray):
    """Two-port admittances ``(Yff, Yft, Ytf, Ytt)`` of the pi model with tap and shift."""
    r, x, b = branch[:, 2], branch[:, 3], branch[:, 4]
    ratio = np.where(branch[:, 8] == 0, 1.0, branch[:, 8])
    tap = ratio * np.exp(1j * np.deg2rad(branch[:, 9]))
    ys = 1.0 / (r + 1j * x)
    Ytt = ys + 1j * b / 2
    Yff = Ytt / (tap * np.conj(tap))
    Yft = -ys / np.conj(tap)
    Ytf = -ys / tap
    return Yff, Yft, Ytf, Ytt


def network(case: CaseData) -> Network:
    case = case.in_service()
    base = case.baseMVA
    idx = case.bus_index()
    Yff, Yft, Ytf, Ytt = branch_admittances(case.branch)
    rate = case.branch[:, 5]
    cost = np.zeros((case.n_gen, 3))
    if case.gencost is not None:
        for g, row in enumerate(case.gencost):
            n = int(row[3])
            coeffs = row[4:4 + n]
            cost[g, 3 - n:] = coeffs
    ref = case.ref_bus()
    va0 = np.deg2rad(case.bus[:, 8] - case.bus[ref, 8])
    vm0 = case.bus[:, 7].copy()
    gen_bus = np.array([idx[int(b)] for b in case.gen[:, 0]], dtype=np.int64)
    vm0[gen_bus] = case.gen[:, 5]
    return Network(
        base=base,
        f=np.array([idx[int(b)] for b in case.branch[:, 0]], dtype=np.int64),
        t=np.array([idx[int(b)] for b in case.branch[:, 1]], dtype=np.int64),
        Gff=Yff.real, Bff=Yff.imag, Gft=Yft.real, Bft=Yft.imag,
        Gtf=Ytf.real, Btf=Ytf.imag, Gtt=Ytt.real, Btt=Ytt.imag,
        Gs=case.bus[:, 4] / base, Bs=case.bus[:, 5] / base,
        Pd=case.bus[:, 2] / base, Qd=case.bus[:, 3] / base,
        rate2=np.where(rate > 0, (rate / base) ** 2, np.inf),
        gen_bus=gen_bus,
        Pmin=case.gen[:, 9] / base, Pmax=case.gen[:, 8] / base,
        Qmin=case.gen[:, 4] / base, Qmax=case.gen[:, 3] / base,
        cost=cost, Vmin=case.bus[:, 12], Vmax=case.bus[:, 11],
        Vm0=vm0, Va0=va0, Pg0=case.gen[:, 1] / base,
    )


# ---------------------------------------------------------------------------
# basis

class OpfBasis:
    """Shared nonlinear basis of the polar power-flow model.

    Layout (linear prefix first, then entries that are nonlinear in the prefix):

        1 | Vm^2 (bus) | Pd (bus) | Qd (bus) | a Vf^2 | a Vt^2 | a VfVt cos | a VfVt sin | Pg (ctrl)
        | |S_f|^2 | |S_t|^2 | Pg^2 (ctrl) | Pg_bal^2

    where ``a`` is the in-service flag of the branch in the scenario.
    """

    def __init__(self, net: Network, vmap: OpfVariableMap):
        self.net, self.vmap = net, vmap
        nb, nl, nc = net.n_bus, net.n_line, vmap.ctrl_gen.size
        self.nb, self.nl, self.nc = nb, nl, nc
        sizes = [("one", 1), ("vm2", nb), ("pd", nb), ("qd", nb), ("avf2", nl), ("avt2", nl),
                 ("ac", nl), ("as", nl), ("pg", nc), ("sf2", nl), ("st2", nl), ("pg2", nc), ("pgbal2", 1)]
        self.seg, off = {}, 0
        for name, n in sizes:
            self.seg[name] = (off, off + n)
            off += n
        self.n_b = off
        self.n_pre = self.seg["pg"][1]
        nd = vmap.n_d

        def select(rows, cols, nrows):
            return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(nrows, nd))

        va_i, vm_i, pg_i = vmap.va_index(), vmap.vm_index(), vmap.pg_index()
        self.S_va = select(list(va_i), list(va_i.values()), nb)
        self.S_vm = select(list(vm_i), list(vm_i.values()), nb)
        self.S_pg = select(list(range(nc)), [pg_i[int(g)] for g in vmap.ctrl_gen], nc)
        self.Cf = sp.csr_matrix((np.ones(nl), (np.arange(nl), net.f)), shape=(nl, nb))
        self.Ct = sp.csr_matrix((np.ones(nl), (np.arange(nl), net.t)), shape=(nl, nb))
        self.A = (self.Cf - self.Ct).tocsr()
        self.S_vaT, self.S_vmT, self.S_pgT = self.S_va.T.tocsr(), self.S_vm.T.tocsr(), self.S_pg.T.tocsr()
        self.CfT, self.CtT, self.AT = self.Cf.T.tocsr(), self.Ct.T.tocsr(), self.A.T.tocsr()

        # flows as linear maps on the prefix
        def lin(rows_coeffs):
            mats = []
            for name, coef in rows_coeffs:
                a, b = self.seg[name]
                mats.append(sp.csr_matrix((coef, (np.arange(nl), a + np.arange(nl))), shape=(nl, self.n_b)))
            return sum(mats[1:], mats[0]).tocsr()

        self.Pf = lin([("avf2", net.Gff), ("ac", net.Gft), ("as", net.Bft)])
        self.Qf = lin([("avf2", -net.Bff), ("as", net.Gft), ("ac", -net.Bft)])
        self.Pt = lin([("avt2", net.Gtt), ("ac", net.Gtf), ("as", -net.Btf)])
        self.Qt = lin([("avt2", -net.Btt), ("as", -net.Gtf), ("ac", -net.Btf)])

        # bus balances without the dependent generator quantities
        def bus_diag(name, coef):
            a, _ = self.seg[name]
            return sp.csr_matrix((coef, (np.arange(nb), a + np.arange(nb))), shape=(nb, self.n_b))

        gen_of_ctrl = net.gen_bus[vmap.ctrl_gen]
        a_pg, _ = self.seg["pg"]
        P_gen = sp.csr_matrix((np.ones(nc), (gen_of_ctrl, a_pg + np.arange(nc))), shape=(nb, self.n_b))
        self.Pbal = (P_gen - bus_diag("pd", np.ones(nb)) - bus_diag("vm2", net.Gs)
                     - self.CfT @ self.Pf - self.CtT @ self.Pt).tocsr()
        self.Qbal = (-bus_diag("qd", np.ones(nb)) + bus_diag("vm2", net.Bs)
                     - self.CfT @ self.Qf - self.CtT @ self.Qt).tocsr()
        self.Pbal_ref = (-self.Pbal[[vmap.ref]]).tocsr()   # balancing generator output
        self.Qgen = (-self.Qbal[vmap.gen_bus]).tocsr()      # reactive output per generator bus

        pre = slice(0, self.n_pre)
        self._Pf, self._Qf = self.Pf[:, pre].tocsr(), self.Qf[:, pre].tocsr()
        self._Pt, self._Qt = self.Pt[:, pre].tocsr(), self.Qt[:, pre].tocsr()
        self._Pref = self.Pbal_ref[:, pre].tocsr()
        self._PfT, self._QfT = self._Pf.T.tocsr(), self._Qf.T.tocsr()
        self._PtT, self._QtT = self._Pt.T.tocsr(), self._Qt.T.tocsr()
        self._PrefT = self._Pref.T.tocsr()

    # forward pieces shared by evaluate and adjoint
    def _forward(self, d, data):
        M = np.shape(data["pd"])[1]
        vm = spmm(self.S_vm, d)
        va = spmm(self.S_va, d)
        pg = spmm(self.S_pg, d)
        vm2 = vm * vm
        vf, vt = spmm(self.Cf, vm), spmm(self.Ct, vm)
        th = spmm(self.A, va)
        vv = vf * vt
        cth, sth = cos(th), sin(th)
        a = data["avail"]
        prefix = vstack([
            np.ones((1, M)), vm2, data["pd"], data["qd"],
            a * spmm(self.Cf, vm2), a * spmm(self.Ct, vm2), a * (vv * cth), a * (vv * sth), pg,
        ])
        return dict(vm=vm, pg=pg, vf=vf, vt=vt, vv=vv, cth=cth, sth=sth, a=a, prefix=prefix)

    def evaluate(self, d, data):
        F = self._forward(d, data)
        pre = F["prefix"]
        pf, qf = spmm(self._Pf, pre), spmm(self._Qf, pre)
        pt, qt = spmm(self._Pt, pre), spmm(self._Qt, pre)
        pref = spmm(self._Pref, pre)
        pg = F["pg"]
        return vstack([pre, pf * pf + qf * qf, pt * pt + qt * qt, pg * pg, pref * pref])

    def adjoint(self, d, wbar, data):
        """Gradient of ``sum_k wbar_k psi_k`` with respect to ``d``, column by column."""
        F = self._forward(d, data)
        pre = F["prefix"]
        wbar = np.asarray(wbar, dtype=float)
        seg = self.seg

        def w(name):
            a, b = seg[name]
            return wbar[a:b]

        # entries that are nonlinear in the prefix: pull back onto the prefix first
        pf, qf = spmm(self._Pf, pre), spmm(self._Qf, pre)
        pt, qt = spmm(self._Pt, pre), spmm(self._Qt, pre)
        pref = spmm(self._Pref, pre)
        wsf, wst = 2.0 * w("sf2"), 2.0 * w("st2")
        wp = (wbar[: self.n_pre] + spmm(self._PfT, pf * wsf) + spmm(self._QfT, qf * wsf)
              + spmm(self._PtT, pt * wst) + spmm(self._QtT, qt * wst)
              + spmm(self._PrefT, pref * (2.0 * w("pgbal2"))))

        def wpre(name):
            a, b = seg[name]
            return wp[a:b]

        a = F["a"]
        pg_bar = wpre("pg") + F["pg"] * (2.0 * w("pg2"))
        c_bar, s_bar = a * wpre("ac"), a * wpre("as")
        vv_bar = c_bar * F["cth"] + s_bar * F["sth"]
        th_bar = F["vv"] * (s_bar * F["cth"] - c_bar * F["sth"])
        vm2_bar = wpre("vm2") + spmm(self.CfT, a * wpre("avf2")) + spmm(self.CtT, a * wpre("avt2"))
        vm_bar = (F["vm"] * (2.0 * vm2_bar) + spmm(self.CfT, vv_bar * F["vt"])
                  + spmm(self.CtT, vv_bar * F["vf"]))
        va_bar = spmm(self.AT, th_bar)
        return spmm(self.S_vmT, vm_bar) + spmm(self.S_vaT, va_bar) + spmm(self.S_pgT, pg_bar)


# ---------------------------------------------------------------------------
# builder

@dataclass(frozen=True)
class OpfModel:
    nlp: BlockNlp
    case: CaseData
    net: Network
    vmap: OpfVariableMap
    basis: OpfBasis
    scenarios: ScenarioSet
    L_f_unit: sp.csr_matrix   # cost of one scenario, unscaled

    def objective(self, f_blocks) -> float:
        """Expected generation cost from the scaled block objectives."""
        return float(np.sum(f_blocks)) / self.nlp.objective_scale


def scenario_data(net: Network, scenarios: ScenarioSet) -> dict:
    N = scenarios.N
    avail = np.ones((net.n_line, N))
    for i, out in enumerate(scenarios.outages):
        avail[list(out), i] = 0.0
    mult = scenarios.multipliers.T
    return {"pd": net.Pd[:, None] * mult, "qd": net.Qd[:, None] * mult, "avail": avail}


def build_block_opf(case: CaseData, scenarios: ScenarioSet | None = None, N: int | None = None,
                    scale_objective: bool = True) -> OpfModel:
    """Block OPF with one block per scenario (defaults: ``N`` identical base-case scenarios)."""
    if scenarios is None:
        scenarios = generate_scenarios(case, N or 1, 0.0)
    if scenarios.multipliers.shape[1] != case.n_bus:
        raise ValueError("scenario multipliers do not match the bus count")
    for i, out in enumerate(scenarios.outages):
        if out and not is_connected(case, out):
            raise DisconnectedNetwork(i, out)
    net = network(case)
    vmap = variable_map(case)
    basis = OpfBasis(net, vmap)
    N = scenarios.N
    nb, nl = net.n_bus, net.n_line
    n_b = basis.n_b

    L_g = sp.vstack([basis.Pbal[vmap.nonref_bus], basis.Qbal[vmap.nongen_bus]]).tocsr()

    def pick(name):
        a, b = basis.seg[name]
        return sp.csr_matrix((np.ones(b - a), (np.arange(b - a), np.arange(a, b))), shape=(b - a, n_b))

    L_h = sp.vstack([pick("sf2"), pick("st2"), basis.Qgen, basis.Pbal_ref]).tocsr()

    base = net.base
    c = net.cost
    ctrl, rg = vmap.ctrl_gen, vmap.ref_gen
    cost_row = np.zeros(n_b)
    cost_row[basis.seg["one"][0]] = float(np.sum(c[:, 2]))
    a_pg, _ = basis.seg["pg"]
    a_pg2, _ = basis.seg["pg2"]
    cost_row[a_pg + np.arange(ctrl.size)] += c[ctrl, 1] * base
    cost_row[a_pg2 + np.arange(ctrl.size)] += c[ctrl, 0] * base ** 2
    cost_row[basis.seg["pgbal2"][0]] += c[rg, 0] * base ** 2
    L_f_unit = (sp.csr_matrix(cost_row[None, :]) + c[rg, 1] * base * basis.Pbal_ref).tocsr()

    # bounds
    x_lower = np.concatenate([np.full(vmap.nonref_bus.size, -np.inf), net.Vmin[vmap.nongen_bus]])
    x_upper = np.concatenate([np.full(vmap.nonref_bus.size, np.inf), net.Vmax[vmap.nongen_bus]])
    u_lower = np.concatenate([net.Pmin[ctrl], net.Vmin[vmap.gen_bus]])
    u_upper = np.concatenate([net.Pmax[ctrl], net.Vmax[vmap.gen_bus]])
    qmin = np.zeros(nb)
    qmax = np.zeros(nb)
    np.add.at(qmin, net.gen_bus, net.Qmin)
    np.add.at(qmax, net.gen_bus, net.Qmax)
    h_lower = np.concatenate([np.full(2 * nl, -np.inf), qmin[vmap.gen_bus], [net.Pmin[rg]]])
    h_upper = np.concatenate([net.rate2, net.rate2, qmax[vmap.gen_bus], [net.Pmax[rg]]])
    s_lower, s_upper = -h_upper, -h_lower

    x0 = np.concatenate([net.Va0[vmap.nonref_bus], net.Vm0[vmap.nongen_bus]])
    u0 = np.concatenate([net.Pg0[ctrl], net.Vm0[vmap.gen_bus]])
    data = scenario_data(net, scenarios)

    scale = 1.0
    if scale_objective:
        d0 = np.concatenate([x0, u0])[:, None]
        g0 = np.asarray(basis.adjoint(d0, np.asarray(L_f_unit.T.toarray()), {k: v[:, :1] for k, v in data.items()}))
        gmax = float(np.max(np.abs(g0), initial=0.0))
        scale = min(1.0, 100.0 / gmax) if gmax > 0 else 1.0

    dims = BlockDims(N=N, n_x=vmap.n_x, n_u=vmap.n_u, m=L_h.shape[0], n_b=n_b)
    nlp = BlockNlp(
        dims=dims, basis=basis, L_f=(L_f_unit * (scale / N)).tocsr(), L_g=L_g, L_h=L_h,
        x_lower=x_lower, x_upper=x_upper, u_lower=u_lower, u_upper=u_upper,
        s_lower=s_lower, s_upper=s_upper,
        x_start=np.tile(x0, (N, 1)), u_start=u0, block_data=data,
        objective_scale=scale, name=f"{case.name}-N{N}",
    )
    return OpfModel(nlp, case, net, vmap, basis, scenarios, L_f_unit)
