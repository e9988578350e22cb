use faer::c64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::kernel::{self, Band, Small};
use super::{Checkpoint, InitialState, Scheme, TrajectoryRecord, UnravellingConfig};
use crate::error::{Error, Result};
use crate::linalg::{self, re, CMat};
use crate::liouvillian::{build_liouvillian, steady_state};
use crate::qfi::qfi_of_state;
use crate::spin::{build_spin_operators, DensityOperator, SpinSector};

/// Scores beyond this magnitude abort the trajectory.
pub(crate) const SCORE_LIMIT: f64 = 1e8;
/// Negative eigenvalues of a conditional state beyond this are an error.
const PSD_TOLERANCE: f64 = 1e-8;
const DUMP_LENGTH: usize = 20;

/// Short-time no-jump propagator and its ω-derivative.
struct Propagator {
    m0: Small,
    dm0: Small,
}

impl Propagator {
    fn new(jx: &CMat, cdc: &CMat, omega: f64, dt: f64) -> Self {
        let mut a = linalg::scale(jx, c64::new(0.0, -omega * dt));
        linalg::axpy(&mut a, re(-0.5 * dt), cdc);
        let e = linalg::scale(jx, c64::new(0.0, -dt));
        let (m0, dm0) = linalg::expm_frechet(&a, &e);
        Self {
            m0: Small::from_cmat(&m0),
            dm0: Small::from_cmat(&dm0),
        }
    }
}

pub(crate) enum Start {
    Pure(Vec<c64>),
    Mixed(Small),
    Mixture(Vec<(f64, Vec<c64>)>),
}

/// Everything a trajectory needs that does not depend on the record.
pub(crate) struct Model {
    sector: SpinSector,
    scheme: Scheme,
    eta: f64,
    dt: f64,
    pure: bool,
    c: Band,
    chat: Band,
    chat2: Band,
    /// Diagonal of `c†c`.
    cdc: Vec<f64>,
    /// `ĉ + ĉ†` for the measured quadrature.
    quadrature: Small,
    jy: Small,
    jz: Small,
    main: Propagator,
    shifted: Option<(f64, Small, Small)>,
    pub(crate) start: Start,
    steps: Vec<usize>,
    n_steps: usize,
}

impl Model {
    pub(crate) fn new(cfg: &UnravellingConfig) -> Result<Self> {
        cfg.validate()?;
        let sector = SpinSector::new(cfg.n_spins)?;
        let ops = build_spin_operators(sector);
        let dt = cfg.step();
        let n = cfg.n_spins as f64;
        let c = linalg::scale(ops.jminus.matrix(), re((2.0 * cfg.kappa / n).sqrt()));
        let phase = c64::from_polar(1.0, cfg.homodyne_phase);
        let chat = linalg::scale(&c, phase);
        let chat2 = &chat * &chat;
        let cdc = &linalg::dagger(&c) * &c;
        let quadrature = &chat + &linalg::dagger(&chat);
        let jx = ops.jx.matrix();
        let main = Propagator::new(jx, &cdc, cfg.omega, dt);
        let shifted = cfg.finite_difference.map(|delta| {
            let plus = Propagator::new(jx, &cdc, cfg.omega + delta, dt).m0;
            let minus = Propagator::new(jx, &cdc, cfg.omega - delta, dt).m0;
            (delta, plus, minus)
        });
        let start = initial_state(cfg, sector)?;
        let pure = cfg.uses_pure_filter();
        Ok(Self {
            sector,
            scheme: cfg.scheme,
            eta: cfg.eta,
            dt,
            pure,
            c: Band::from_cmat(&c, 1),
            chat: Band::from_cmat(&chat, 1),
            chat2: Band::from_cmat(&chat2, 2),
            cdc: (0..sector.dimension()).map(|i| cdc[(i, i)].re).collect(),
            quadrature: Small::from_cmat(&quadrature),
            jy: Small::from_cmat(ops.jy.matrix()),
            jz: Small::from_cmat(ops.jz.matrix()),
            main,
            shifted,
            start,
            steps: cfg.checkpoint_steps(),
            n_steps: cfg.n_steps(),
        })
    }
}

fn initial_state(cfg: &UnravellingConfig, sector: SpinSector) -> Result<Start> {
    let d = sector.dimension();
    let basis = |k: usize| {
        let mut v = vec![c64::new(0.0, 0.0); d];
        v[k] = re(1.0);
        v
    };
    Ok(match cfg.initial {
        InitialState::Dark => Start::Pure(basis(d - 1)),
        InitialState::FullyExcited => Start::Pure(basis(0)),
        InitialState::MaximallyMixed => {
            let mut m = Small::identity(d);
            m.scale(1.0 / d as f64);
            Start::Mixed(m)
        }
        InitialState::Steady | InitialState::SteadySample => {
            let rho = steady_state(&build_liouvillian(sector, cfg.omega, cfg.kappa)?)?;
            if cfg.initial == InitialState::Steady {
                Start::Mixed(Small::from_cmat(rho.matrix()))
            } else {
                let (p, u) = linalg::eigh(rho.matrix())?;
                Start::Mixture(
                    p.iter()
                        .enumerate()
                        .filter(|(_, &w)| w > 0.0)
                        .map(|(k, &w)| (w, (0..d).map(|i| u[(i, k)]).collect()))
                        .collect(),
                )
            }
        }
    })
}

enum Filter {
    Pure {
        psi: Vec<c64>,
        phi: Vec<c64>,
        shifted: Option<(Vec<c64>, Vec<c64>)>,
    },
    Mixed {
        rho: Small,
        tau: Small,
        shifted: Option<(Small, Small)>,
    },
}

struct Scratch {
    v: Vec<c64>,
    w: Vec<c64>,
    u: Vec<c64>,
    g: Small,
    k: Small,
    dk: Small,
    a: Small,
    b: Small,
    x: Small,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Self {
            v: vec![c64::new(0.0, 0.0); d],
            w: vec![c64::new(0.0, 0.0); d],
            u: vec![c64::new(0.0, 0.0); d],
            g: Small::zeros(d),
            k: Small::zeros(d),
            dk: Small::zeros(d),
            a: Small::zeros(d),
            b: Small::zeros(d),
            x: Small::zeros(d),
        }
    }
}

fn norm_sqr(v: &[c64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

fn expect(a: &Small, v: &[c64], tmp: &mut [c64]) -> c64 {
    kernel::mat_vec(a, v, tmp);
    linalg::dot_conj(v, tmp)
}

/// `v + a·ĉv + b·ĉ²v`.
fn apply_g(m: &Model, a: f64, b: f64, v: &[c64], out: &mut [c64]) {
    out.copy_from_slice(v);
    for (i, x) in m.chat.values.iter().enumerate() {
        out[i + 1] += a * x * v[i];
    }
    for (i, x) in m.chat2.values.iter().enumerate() {
        out[i + 2] += b * x * v[i];
    }
}

/// Derivative of `⟨A⟩` of the normalized state.
fn derivative_expectation(a: &Small, filter: &Filter, score: f64, tmp: &mut Small) -> f64 {
    match filter {
        Filter::Pure { psi, phi, .. } => {
            let mut av = vec![c64::new(0.0, 0.0); psi.len()];
            kernel::mat_vec(a, phi, &mut av);
            let cross = linalg::dot_conj(psi, &av).re;
            kernel::mat_vec(a, psi, &mut av);
            2.0 * cross - score * linalg::dot_conj(psi, &av).re
        }
        Filter::Mixed { rho, tau, .. } => {
            tmp.copy_from(tau);
            tmp.axpy(re(-score), rho);
            a.trace_product(tmp).re
        }
    }
}

fn diag_weight(diag: &[f64], filter: &Filter, score: f64) -> (f64, f64) {
    match filter {
        Filter::Pure { psi, phi, .. } => {
            let mut mu = 0.0;
            let mut dmu = 0.0;
            for (i, w) in diag.iter().enumerate() {
                let p = psi[i].norm_sqr();
                mu += w * p;
                dmu += w * (2.0 * (psi[i].conj() * phi[i]).re - score * p);
            }
            (mu, dmu)
        }
        Filter::Mixed { rho, tau, .. } => {
            let mut mu = 0.0;
            let mut dmu = 0.0;
            for (i, w) in diag.iter().enumerate() {
                mu += w * rho.get(i, i).re;
                dmu += w * (tau.get(i, i).re - score * rho.get(i, i).re);
            }
            (mu, dmu)
        }
    }
}

struct Runner<'a> {
    m: &'a Model,
    filter: Filter,
    scratch: Scratch,
    score: f64,
    compensator: f64,
    loglik: (f64, f64),
}

impl Runner<'_> {
    fn homodyne_step(&mut self, noise: f64) -> f64 {
        let m = self.m;
        let dt = m.dt;
        let root_eta = m.eta.sqrt();
        let h;
        let dh;
        {
            let sc = &mut self.scratch;
            let mean = match &self.filter {
                Filter::Pure { psi, .. } => expect(&m.quadrature, psi, &mut sc.u).re,
                Filter::Mixed { rho, .. } => m.quadrature.trace_product(rho).re,
            };
            h = root_eta * mean;
            dh = root_eta * derivative_expectation(&m.quadrature, &self.filter, self.score, &mut sc.x);
        }
        self.compensator += dh * dh * dt;
        let dy = h * dt + dt.sqrt() * noise;
        let a = root_eta * dy;
        let b = 0.5 * m.eta * (dy * dy - dt);
        let sc = &mut self.scratch;
        match &mut self.filter {
            Filter::Pure { psi, phi, shifted } => {
                apply_g(m, a, b, psi, &mut sc.v);
                apply_g(m, a, b, phi, &mut sc.w);
                kernel::mat_vec(&m.main.m0, &sc.v, psi);
                kernel::mat_vec(&m.main.m0, &sc.w, phi);
                kernel::mat_vec(&m.main.dm0, &sc.v, &mut sc.u);
                for (p, q) in phi.iter_mut().zip(&sc.u) {
                    *p += q;
                }
                let n = norm_sqr(psi);
                let inv = 1.0 / n.sqrt();
                psi.iter_mut().for_each(|z| *z *= inv);
                phi.iter_mut().for_each(|z| *z *= inv);
                self.score = 2.0 * linalg::dot_conj(psi, phi).re;
                if let (Some((plus, minus)), Some((_, mp, mm))) = (shifted, &m.shifted) {
                    for (state, prop, ll) in [(plus, mp, &mut self.loglik.0), (minus, mm, &mut self.loglik.1)] {
                        apply_g(m, a, b, state, &mut sc.v);
                        kernel::mat_vec(prop, &sc.v, state);
                        let n = norm_sqr(state);
                        let inv = 1.0 / n.sqrt();
                        state.iter_mut().for_each(|z| *z *= inv);
                        *ll += n.ln();
                    }
                }
            }
            Filter::Mixed { rho, tau, shifted } => {
                let residual = (1.0 - m.eta) * dt;
                sc.g.set_identity();
                m.chat.add_to(re(a), &mut sc.g);
                m.chat2.add_to(re(b), &mut sc.g);
                kernel::mul_lower(&m.main.m0, &sc.g, 2, &mut sc.k);
                kernel::mul_lower(&m.main.dm0, &sc.g, 2, &mut sc.dk);
                // Tangent source dK ρ K† + h.c. uses the old state.
                kernel::mul(&sc.dk, rho, &mut sc.a);
                kernel::mul_adj(&sc.a, &sc.k, &mut sc.x);
                kernel::mul(&sc.k, tau, &mut sc.a);
                kernel::mul_adj(&sc.a, &sc.k, &mut sc.b);
                kernel::add_with_adjoint(&sc.x, &mut sc.b);
                if residual > 0.0 {
                    m.c.sandwich(tau, &mut sc.a);
                    sc.b.axpy(re(residual), &sc.a);
                }
                tau.copy_from(&sc.b);
                kernel::mul(&sc.k, rho, &mut sc.a);
                kernel::mul_adj(&sc.a, &sc.k, &mut sc.b);
                if residual > 0.0 {
                    m.c.sandwich(rho, &mut sc.a);
                    sc.b.axpy(re(residual), &sc.a);
                }
                rho.copy_from(&sc.b);
                let n = rho.trace().re;
                rho.scale(1.0 / n);
                tau.scale(1.0 / n);
                rho.hermitize();
                tau.hermitize();
                self.score = tau.trace().re;
                if let (Some((plus, minus)), Some((_, mp, mm))) = (shifted, &m.shifted) {
                    for (state, prop, ll) in [(plus, mp, &mut self.loglik.0), (minus, mm, &mut self.loglik.1)] {
                        kernel::mul_lower(prop, &sc.g, 2, &mut sc.k);
                        kernel::mul(&sc.k, state, &mut sc.a);
                        kernel::mul_adj(&sc.a, &sc.k, &mut sc.b);
                        if residual > 0.0 {
                            m.c.sandwich(state, &mut sc.a);
                            sc.b.axpy(re(residual), &sc.a);
                        }
                        state.copy_from(&sc.b);
                        let n = state.trace().re;
                        state.scale(1.0 / n);
                        state.hermitize();
                        *ll += n.ln();
                    }
                }
            }
        }
        dy / dt
    }

    /// Returns whether a jump occurred.
    fn photodetection_step(&mut self, uniform: f64, time: f64) -> Result<bool> {
        let m = self.m;
        let dt = m.dt;
        let (mu, dmu) = diag_weight(&m.cdc, &self.filter, self.score);
        let p = m.eta * mu * dt;
        if p > 0.5 {
            return Err(Error::StepSize { probability: p, time });
        }
        if mu > f64::MIN_POSITIVE {
            self.compensator += m.eta * dmu * dmu / mu * dt;
        }
        let jump = uniform < p;
        let residual = (1.0 - m.eta) * dt;
        let sc = &mut self.scratch;
        match &mut self.filter {
            Filter::Pure { psi, phi, shifted } => {
                if jump {
                    m.c.apply(psi, &mut sc.v);
                    m.c.apply(phi, &mut sc.w);
                    psi.copy_from_slice(&sc.v);
                    phi.copy_from_slice(&sc.w);
                } else {
                    kernel::mat_vec(&m.main.m0, psi, &mut sc.v);
                    kernel::mat_vec(&m.main.m0, phi, &mut sc.w);
                    kernel::mat_vec(&m.main.dm0, psi, &mut sc.u);
                    psi.copy_from_slice(&sc.v);
                    for ((p, w), u) in phi.iter_mut().zip(&sc.w).zip(&sc.u) {
                        *p = w + u;
                    }
                }
                let n = norm_sqr(psi);
                let inv = 1.0 / n.sqrt();
                psi.iter_mut().for_each(|z| *z *= inv);
                phi.iter_mut().for_each(|z| *z *= inv);
                self.score = 2.0 * linalg::dot_conj(psi, phi).re;
                if let (Some((plus, minus)), Some((_, mp, mm))) = (shifted, &m.shifted) {
                    for (state, prop, ll) in [(plus, mp, &mut self.loglik.0), (minus, mm, &mut self.loglik.1)] {
                        if jump {
                            m.c.apply(state, &mut sc.v);
                        } else {
                            kernel::mat_vec(prop, state, &mut sc.v);
                        }
                        let n = norm_sqr(&sc.v);
                        let inv = 1.0 / n.sqrt();
                        for (s, v) in state.iter_mut().zip(&sc.v) {
                            *s = v * inv;
                        }
                        *ll += n.ln();
                    }
                }
            }
            Filter::Mixed { rho, tau, shifted } => {
                if jump {
                    m.c.sandwich(rho, &mut sc.a);
                    rho.copy_from(&sc.a);
                    m.c.sandwich(tau, &mut sc.a);
                    tau.copy_from(&sc.a);
                } else {
                    let m0 = &m.main.m0;
                    kernel::mul(&m.main.dm0, rho, &mut sc.a);
                    kernel::mul_adj(&sc.a, m0, &mut sc.x);
                    kernel::mul(m0, tau, &mut sc.a);
                    kernel::mul_adj(&sc.a, m0, &mut sc.b);
                    kernel::add_with_adjoint(&sc.x, &mut sc.b);
                    if residual > 0.0 {
                        m.c.sandwich(tau, &mut sc.a);
                        sc.b.axpy(re(residual), &sc.a);
                    }
                    tau.copy_from(&sc.b);
                    kernel::mul(m0, rho, &mut sc.a);
                    kernel::mul_adj(&sc.a, m0, &mut sc.b);
                    if residual > 0.0 {
                        m.c.sandwich(rho, &mut sc.a);
                        sc.b.axpy(re(residual), &sc.a);
                    }
                    rho.copy_from(&sc.b);
                }
                let n = rho.trace().re;
                rho.scale(1.0 / n);
                tau.scale(1.0 / n);
                rho.hermitize();
                tau.hermitize();
                self.score = tau.trace().re;
                if let (Some((plus, minus)), Some((_, mp, mm))) = (shifted, &m.shifted) {
                    for (state, prop, ll) in [(plus, mp, &mut self.loglik.0), (minus, mm, &mut self.loglik.1)] {
                        if jump {
                            m.c.sandwich(state, &mut sc.b);
                        } else {
                            kernel::mul(prop, state, &mut sc.a);
                            kernel::mul_adj(&sc.a, prop, &mut sc.b);
                            if residual > 0.0 {
                                m.c.sandwich(state, &mut sc.a);
                                sc.b.axpy(re(residual), &sc.a);
                            }
                        }
                        state.copy_from(&sc.b);
                        let n = state.trace().re;
                        state.scale(1.0 / n);
                        state.hermitize();
                        *ll += n.ln();
                    }
                }
            }
        }
        Ok(jump)
    }

    /// Normalized state and derivative of the normalized state.
    fn state_pair(&self) -> (Small, Small) {
        match &self.filter {
            Filter::Pure { psi, phi, .. } => {
                let rho = Small::projector(psi);
                let d = psi.len();
                let mut drho = Small::zeros(d);
                for i in 0..d {
                    for j in 0..d {
                        let v = phi[i] * psi[j].conj() + psi[i] * phi[j].conj()
                            - self.score * psi[i] * psi[j].conj();
                        drho.set(i, j, v);
                    }
                }
                (rho, drho)
            }
            Filter::Mixed { rho, tau, .. } => {
                let mut drho = tau.clone();
                drho.axpy(re(-self.score), rho);
                (rho.clone(), drho)
            }
        }
    }

    /// Clips small negative eigenvalues of a mixed state.
    fn project_psd(&mut self, time: f64, trajectory: u64) -> Result<()> {
        if let Filter::Mixed { rho, .. } = &mut self.filter {
            let min = linalg::eigvalsh(&rho.to_cmat())?
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            if min < -PSD_TOLERANCE {
                return Err(Error::Integrator {
                    time,
                    min_eigenvalue: min,
                    trajectory,
                });
            }
            if min < 0.0 {
                let fixed = DensityOperator::from_approximate(self.m.sector, rho.to_cmat(), PSD_TOLERANCE)?;
                *rho = Small::from_cmat(fixed.matrix());
            }
        }
        Ok(())
    }

    fn checkpoint(&self, time: f64, want_qfi: bool) -> Result<Checkpoint> {
        let m = self.m;
        let (purity, jy, jz) = match &self.filter {
            Filter::Pure { psi, .. } => {
                let mut tmp = vec![c64::new(0.0, 0.0); psi.len()];
                let n = norm_sqr(psi);
                (
                    n * n,
                    expect(&m.jy, psi, &mut tmp).re,
                    expect(&m.jz, psi, &mut tmp).re,
                )
            }
            Filter::Mixed { rho, .. } => (
                rho.purity(),
                m.jy.trace_product(rho).re,
                m.jz.trace_product(rho).re,
            ),
        };
        let conditional_qfi = if want_qfi {
            let (rho, drho) = self.state_pair();
            let state = DensityOperator::from_approximate(m.sector, rho.to_cmat(), PSD_TOLERANCE)?;
            Some(qfi_of_state(&state, &linalg::hermitian_part(&drho.to_cmat()))?)
        } else {
            None
        };
        Ok(Checkpoint {
            time,
            score: self.score,
            compensator: self.compensator,
            score_fd: m
                .shifted
                .as_ref()
                .map(|(delta, _, _)| (self.loglik.0 - self.loglik.1) / (2.0 * delta)),
            purity,
            jy,
            jz,
            conditional_qfi,
        })
    }
}

pub(crate) fn run(model: &Model, cfg: &UnravellingConfig, index: u64) -> Result<TrajectoryRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let d = model.sector.dimension();
    let pure_start = match &model.start {
        Start::Pure(v) => Some(v.clone()),
        Start::Mixture(parts) => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = &parts[parts.len() - 1].1;
            for (w, v) in parts {
                acc += w;
                if u < acc {
                    pick = v;
                    break;
                }
            }
            Some(pick.clone())
        }
        Start::Mixed(_) => None,
    };
    let filter = match (model.pure, pure_start) {
        (true, Some(psi)) => Filter::Pure {
            shifted: model.shifted.as_ref().map(|_| (psi.clone(), psi.clone())),
            phi: vec![c64::new(0.0, 0.0); d],
            psi,
        },
        (_, start) => {
            let rho = match (start, &model.start) {
                (Some(psi), _) => Small::projector(&psi),
                (None, Start::Mixed(r)) => r.clone(),
                _ => unreachable!("mixed start always carries a matrix"),
            };
            Filter::Mixed {
                shifted: model.shifted.as_ref().map(|_| (rho.clone(), rho.clone())),
                tau: Small::zeros(d),
                rho,
            }
        }
    };
    let mut runner = Runner {
        m: model,
        filter,
        scratch: Scratch::new(d),
        score: 0.0,
        compensator: 0.0,
        loglik: (0.0, 0.0),
    };
    let dt = model.dt;
    let mut checkpoints = Vec::with_capacity(model.steps.len());
    let mut states = Vec::new();
    let mut jumps = Vec::new();
    let mut current = Vec::new();
    let mut next = 0;
    for step in 0..=model.n_steps {
        let time = step as f64 * dt;
        if next < model.steps.len() && model.steps[next] == step {
            runner.project_psd(time, index)?;
            checkpoints.push(runner.checkpoint(time, cfg.conditional_qfi)?);
            if cfg.keep_states {
                let (rho, drho) = runner.state_pair();
                states.push((rho.to_cmat(), drho.to_cmat()));
            }
            next += 1;
        }
        if step == model.n_steps {
            break;
        }
        match model.scheme {
            Scheme::Homodyne => {
                let noise: f64 = rng.sample(StandardNormal);
                let i = runner.homodyne_step(noise);
                if cfg.keep_record {
                    current.push(i);
                }
            }
            Scheme::Photodetection => {
                let u: f64 = rng.random();
                if runner.photodetection_step(u, time)? {
                    jumps.push(time + dt);
                }
            }
        }
        if !(runner.score.abs() <= SCORE_LIMIT) {
            let start = checkpoints.len().saturating_sub(DUMP_LENGTH);
            return Err(Error::UnstableFilter {
                score: runner.score,
                time: time + dt,
                trajectory: index,
                dump: checkpoints[start..].iter().map(|c| (c.time, c.score)).collect(),
            });
        }
    }
    Ok(TrajectoryRecord {
        index,
        seed: cfg.seed,
        scheme: cfg.scheme,
        checkpoints,
        states,
        jumps,
        current,
        dt,
    })
}

/// One trajectory with RNG stream `index` of the master seed.
pub fn simulate_trajectory(cfg: &UnravellingConfig, index: u64) -> Result<TrajectoryRecord> {
    let model = Model::new(cfg)?;
    run(&model, cfg, index)
}

pub fn simulate_photodetection(cfg: &UnravellingConfig) -> Result<TrajectoryRecord> {
    if cfg.scheme != Scheme::Photodetection {
        return Err(Error::param("scheme", "expected photodetection"));
    }
    simulate_trajectory(cfg, 0)
}

pub fn simulate_homodyne(cfg: &UnravellingConfig) -> Result<TrajectoryRecord> {
    if cfg.scheme != Scheme::Homodyne {
        return Err(Error::param("scheme", "expected homodyne"));
    }
    simulate_trajectory(cfg, 0)
}

/// Jump times from exact waiting-time sampling of the no-jump evolution,
/// state only. Survival is bracketed on the `dt` grid and refined by
/// bisection.
pub fn waiting_times(cfg: &UnravellingConfig, index: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    if cfg.scheme != Scheme::Photodetection {
        return Err(Error::param("scheme", "waiting times need photodetection"));
    }
    let sector = SpinSector::new(cfg.n_spins)?;
    let d = sector.dimension();
    let l = build_liouvillian(sector, cfg.omega, cfg.kappa)?;
    let ops = build_spin_operators(sector);
    let c = linalg::scale(ops.jminus.matrix(), re((2.0 * cfg.kappa / cfg.n_spins as f64).sqrt()));
    let mut no_jump = l.generator().clone();
    linalg::axpy(&mut no_jump, re(-cfg.eta), &linalg::kron(&linalg::conj(&c), &c));
    let dt = cfg.step();
    let step = linalg::expm(&linalg::scale(&no_jump, re(dt)));
    let trace = |v: &[c64]| (0..d).map(|i| v[i * d + i].re).sum::<f64>();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let mut rho = match initial_state(cfg, sector)? {
        Start::Pure(v) => Small::projector(&v).to_cmat(),
        Start::Mixed(m) => m.to_cmat(),
        Start::Mixture(parts) => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = &parts[parts.len() - 1].1;
            for (w, v) in &parts {
                acc += w;
                if u < acc {
                    pick = v;
                    break;
                }
            }
            Small::projector(pick).to_cmat()
        }
    };
    let mut jumps = Vec::new();
    let mut t = 0.0;
    let mut target: f64 = rng.random();
    let mut v = linalg::vectorize(&rho);
    while t < cfg.horizon {
        let next = linalg::mat_vec(&step, &v);
        if trace(&next) > target {
            v = next;
            t += dt;
            continue;
        }
        let (mut lo, mut hi) = (0.0, dt);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            let p = linalg::expm(&linalg::scale(&no_jump, re(mid)));
            if trace(&linalg::mat_vec(&p, &v)) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let tj = t + 0.5 * (lo + hi);
        if tj > cfg.horizon {
            break;
        }
        let p = linalg::expm(&linalg::scale(&no_jump, re(tj - t)));
        rho = linalg::devectorize(&linalg::mat_vec(&p, &v), d);
        rho = &(&c * &rho) * &linalg::dagger(&c);
        let n = linalg::trace(&rho).re;
        rho = linalg::scale(&rho, re(1.0 / n));
        v = linalg::vectorize(&rho);
        jumps.push(tj);
        t = tj;
        target = rng.random();
    }
    Ok(jumps)
}
