//! Single-chain no-U-turn transitions: leapfrog integration with a diagonal
//! metric, multinomial state selection, dual-averaging step-size adaptation,
//! and windowed metric estimation during warmup.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::LogDensity;

/// Energy error beyond which a trajectory is declared divergent.
const DIVERGENCE_THRESHOLD: f64 = 1000.0;

pub(crate) struct ChainRun {
    /// Retained (post-warmup) draws, one position vector per iteration.
    pub draws: Vec<Vec<f64>>,
    pub divergences: usize,
    /// Mean acceptance statistic over retained iterations.
    pub mean_accept: f64,
    pub step_size: f64,
}

struct DualAveraging {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    m: f64,
    target: f64,
}

impl DualAveraging {
    // A stronger regularization scale than the textbook 0.05 damps the
    // log-step-size oscillation, keeping the frozen averaged step size close
    // to the fixed-step acceptance target.
    const GAMMA: f64 = 0.4;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, target: f64) -> Self {
        DualAveraging {
            mu: eps.ln(),
            log_eps: eps.ln(),
            log_eps_bar: eps.ln(),
            h_bar: 0.0,
            m: 0.0,
            target,
        }
    }

    fn update(&mut self, accept_stat: f64) {
        self.m += 1.0;
        let eta = 1.0 / (self.m + Self::T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat);
        self.log_eps = self.mu - self.m.sqrt() / Self::GAMMA * self.h_bar;
        let weight = self.m.powf(-Self::KAPPA);
        self.log_eps_bar = weight * self.log_eps + (1.0 - weight) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn averaged(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Streaming mean/variance for metric windows.
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    /// Regularized variance estimate shrunk toward a small diagonal, as in
    /// standard adaptive HMC practice.
    fn regularized_variance(&self) -> Option<Vec<f64>> {
        if self.n < 2 {
            return None;
        }
        let n = self.n as f64;
        let w = n / (n + 5.0);
        Some(
            self.m2
                .iter()
                .map(|m2| (w * m2 / (n - 1.0) + 1e-3 * (1.0 - w)).max(1e-10))
                .collect(),
        )
    }
}

struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

struct Integrator<'a, T: LogDensity + ?Sized> {
    target: &'a T,
    inv_mass: Vec<f64>,
}

impl<'a, T: LogDensity + ?Sized> Integrator<'a, T> {
    fn hamiltonian(&self, point: &Point) -> f64 {
        -point.logp + 0.5 * kinetic(&point.p, &self.inv_mass)
    }

    /// One leapfrog step; returns the new point.
    fn leapfrog(&self, from: &Point, direction: f64, eps: f64) -> Point {
        let h = direction * eps;
        let dim = from.q.len();
        let mut p: Vec<f64> = (0..dim).map(|i| from.p[i] + 0.5 * h * from.grad[i]).collect();
        let q: Vec<f64> = (0..dim).map(|i| from.q[i] + h * self.inv_mass[i] * p[i]).collect();
        let mut grad = vec![0.0; dim];
        let logp = self.target.log_density_grad(&q, &mut grad);
        for i in 0..dim {
            p[i] += 0.5 * h * grad[i];
        }
        Point { q, p, grad, logp }
    }
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    p.iter().zip(inv_mass).map(|(pi, im)| pi * pi * im).sum()
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Generalized u-turn criterion on a momentum sum.
fn is_turning(p_first: &[f64], p_last: &[f64], rho: &[f64], inv_mass: &[f64]) -> bool {
    let mut dot_first = 0.0;
    let mut dot_last = 0.0;
    for i in 0..rho.len() {
        dot_first += inv_mass[i] * p_first[i] * rho[i];
        dot_last += inv_mass[i] * p_last[i] * rho[i];
    }
    dot_first <= 0.0 || dot_last <= 0.0
}

struct Subtree {
    /// Endpoints in integration order (start is closest to the launch point).
    start: Point,
    end: Point,
    proposal: Option<Point>,
    log_sum_weight: f64,
    rho: Vec<f64>,
    sum_accept: f64,
    n_leapfrog: usize,
    divergent: bool,
    turning: bool,
}

fn build_tree<T: LogDensity + ?Sized, R: Rng>(
    integ: &Integrator<T>,
    from: &Point,
    depth: usize,
    direction: f64,
    eps: f64,
    h0: f64,
    rng: &mut R,
) -> Subtree {
    if depth == 0 {
        let point = integ.leapfrog(from, direction, eps);
        let h = integ.hamiltonian(&point);
        let energy_error = h - h0;
        let divergent = !energy_error.is_finite() || energy_error > DIVERGENCE_THRESHOLD;
        let accept = if energy_error.is_finite() {
            (-energy_error).exp().min(1.0)
        } else {
            0.0
        };
        let log_weight = if divergent { f64::NEG_INFINITY } else { -energy_error };
        let rho = point.p.clone();
        let start = Point {
            q: point.q.clone(),
            p: point.p.clone(),
            grad: point.grad.clone(),
            logp: point.logp,
        };
        let proposal = if divergent { None } else { Some(Point {
            q: point.q.clone(),
            p: point.p.clone(),
            grad: point.grad.clone(),
            logp: point.logp,
        }) };
        return Subtree {
            start,
            end: point,
            proposal,
            log_sum_weight: log_weight,
            rho,
            sum_accept: accept,
            n_leapfrog: 1,
            divergent,
            turning: false,
        };
    }

    let mut inner = build_tree(integ, from, depth - 1, direction, eps, h0, rng);
    if inner.divergent || inner.turning {
        return inner;
    }
    let outer = build_tree(integ, &inner.end, depth - 1, direction, eps, h0, rng);

    let mut tree = Subtree {
        start: inner.start,
        end: outer.end,
        proposal: None,
        log_sum_weight: log_sum_exp(inner.log_sum_weight, outer.log_sum_weight),
        rho: inner
            .rho
            .iter()
            .zip(&outer.rho)
            .map(|(a, b)| a + b)
            .collect(),
        sum_accept: inner.sum_accept + outer.sum_accept,
        n_leapfrog: inner.n_leapfrog + outer.n_leapfrog,
        divergent: outer.divergent,
        turning: outer.turning,
    };
    if tree.divergent || tree.turning {
        // Keep bookkeeping for the acceptance statistic; the caller discards
        // the proposal.
        tree.proposal = None;
        return tree;
    }

    // Multinomial selection between the two halves.
    let take_outer = {
        let diff = outer.log_sum_weight - tree.log_sum_weight;
        diff >= 0.0 || rng.random::<f64>() < diff.exp()
    };
    tree.proposal = if take_outer { outer.proposal } else { inner.proposal.take() };
    tree.turning = is_turning(&tree.start.p, &tree.end.p, &tree.rho, &integ.inv_mass);
    tree
}

/// One NUTS transition from `current`; returns (new point, accept statistic,
/// divergent flag, leapfrog count).
fn transition<T: LogDensity + ?Sized, R: Rng>(
    integ: &Integrator<T>,
    current: Point,
    eps: f64,
    max_depth: usize,
    rng: &mut R,
) -> (Point, f64, bool) {
    let dim = current.q.len();
    let p0: Vec<f64> = (0..dim)
        .map(|i| {
            let z: f64 = StandardNormal.sample(rng);
            z / integ.inv_mass[i].sqrt()
        })
        .collect();
    let mut seed = Point {
        q: current.q.clone(),
        p: p0,
        grad: current.grad.clone(),
        logp: current.logp,
    };
    let h0 = integ.hamiltonian(&seed);

    let mut minus = Point {
        q: seed.q.clone(),
        p: seed.p.clone(),
        grad: seed.grad.clone(),
        logp: seed.logp,
    };
    let mut plus = Point {
        q: seed.q.clone(),
        p: seed.p.clone(),
        grad: seed.grad.clone(),
        logp: seed.logp,
    };
    let mut rho = seed.p.clone();
    let mut log_sum_weight = 0.0;
    let mut sum_accept = 0.0;
    let mut n_leapfrog = 0usize;
    let mut divergent = false;

    for depth in 0..max_depth {
        let go_forward = rng.random::<bool>();
        let direction = if go_forward { 1.0 } else { -1.0 };
        let from = if go_forward { &plus } else { &minus };
        let subtree = build_tree(integ, from, depth, direction, eps, h0, rng);

        sum_accept += subtree.sum_accept;
        n_leapfrog += subtree.n_leapfrog;

        if subtree.divergent {
            divergent = true;
            break;
        }
        if subtree.turning {
            break;
        }

        // Biased progressive sampling favoring the fresh subtree.
        let diff = subtree.log_sum_weight - log_sum_weight;
        if diff >= 0.0 || rng.random::<f64>() < diff.exp() {
            if let Some(prop) = subtree.proposal {
                seed = prop;
            }
        }
        log_sum_weight = log_sum_exp(log_sum_weight, subtree.log_sum_weight);
        for i in 0..dim {
            rho[i] += subtree.rho[i];
        }
        let boundary = if go_forward { &mut plus } else { &mut minus };
        *boundary = subtree.end;
        if is_turning(&minus.p, &plus.p, &rho, &integ.inv_mass) {
            break;
        }
    }

    let accept_stat = if n_leapfrog > 0 {
        sum_accept / n_leapfrog as f64
    } else {
        0.0
    };
    (seed, accept_stat, divergent)
}

/// Heuristic initial step size: double/halve until the one-step acceptance
/// crosses 1/2.
fn initial_step_size<T: LogDensity + ?Sized, R: Rng>(
    integ: &Integrator<T>,
    start: &Point,
    rng: &mut R,
) -> f64 {
    let dim = start.q.len();
    let p0: Vec<f64> = (0..dim)
        .map(|i| {
            let z: f64 = StandardNormal.sample(rng);
            z / integ.inv_mass[i].sqrt()
        })
        .collect();
    let point = Point {
        q: start.q.clone(),
        p: p0,
        grad: start.grad.clone(),
        logp: start.logp,
    };
    let h0 = integ.hamiltonian(&point);
    let mut eps = 1.0;
    let step = integ.leapfrog(&point, 1.0, eps);
    let mut delta = integ.hamiltonian(&step) - h0;
    if !delta.is_finite() {
        delta = f64::INFINITY;
    }
    let go_up = delta < (2.0f64).ln();
    for _ in 0..64 {
        let step = integ.leapfrog(&point, 1.0, eps);
        let mut d = integ.hamiltonian(&step) - h0;
        if !d.is_finite() {
            d = f64::INFINITY;
        }
        if go_up {
            if d > (2.0f64).ln() {
                break;
            }
            eps *= 2.0;
        } else {
            if d < (2.0f64).ln() {
                break;
            }
            eps *= 0.5;
        }
        if !(1e-10..=1e10).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-10, 1e10)
}

/// Warmup phase boundaries: a fast start, doubling slow windows for metric
/// estimation, and a fast tail for final step-size tuning.
fn warmup_windows(warmup: usize) -> (usize, usize, Vec<usize>) {
    if warmup == 0 {
        return (0, 0, Vec::new());
    }
    let (init_buf, term_buf, base) = if warmup >= 150 {
        (75usize, 50usize, 25usize)
    } else {
        let init = (warmup as f64 * 0.15).round().max(1.0) as usize;
        let term = (warmup as f64 * 0.10).round().max(1.0) as usize;
        let base = warmup.saturating_sub(init + term).max(1);
        (init, term, base)
    };
    let slow_end = warmup.saturating_sub(term_buf);
    let mut ends = Vec::new();
    let mut window = base;
    let mut pos = init_buf;
    while pos < slow_end {
        let mut end = pos + window;
        // The final window absorbs what remains if doubling would overshoot.
        if end + 2 * window > slow_end {
            end = slow_end;
        }
        ends.push(end.min(slow_end));
        pos = end;
        window *= 2;
    }
    (init_buf, term_buf, ends)
}

pub(crate) fn run_chain<T: LogDensity + ?Sized, R: Rng>(
    target: &T,
    init: &[f64],
    iterations: usize,
    warmup: usize,
    target_accept: f64,
    max_depth: usize,
    rng: &mut R,
) -> ChainRun {
    let dim = target.dim();
    let mut grad = vec![0.0; dim];
    let logp = target.log_density_grad(init, &mut grad);
    let mut current = Point { q: init.to_vec(), p: vec![0.0; dim], grad, logp };

    let mut integ = Integrator { target, inv_mass: vec![1.0; dim] };
    let mut eps = initial_step_size(&integ, &current, rng);
    let mut adapt = DualAveraging::new(eps, target_accept);
    let (_, _, window_ends) = warmup_windows(warmup);
    let mut welford = Welford::new(dim);
    let mut next_window = 0usize;

    let retained = iterations - warmup;
    let mut draws = Vec::with_capacity(retained);
    let mut divergences = 0usize;
    let mut accept_total = 0.0;

    for iter in 0..iterations {
        let (next, accept_stat, divergent) =
            transition(&integ, current, eps, max_depth, rng);
        current = next;

        if iter < warmup {
            adapt.update(accept_stat);
            eps = adapt.current();
            if next_window < window_ends.len() {
                welford.push(&current.q);
                if iter + 1 == window_ends[next_window] {
                    if let Some(var) = welford.regularized_variance() {
                        integ.inv_mass = var;
                    }
                    welford = Welford::new(dim);
                    next_window += 1;
                    // Re-tune the step size for the new metric.
                    eps = initial_step_size(&integ, &current, rng);
                    adapt = DualAveraging::new(eps, target_accept);
                }
            }
            if iter + 1 == warmup {
                eps = adapt.averaged();
            }
        } else {
            if divergent {
                divergences += 1;
            }
            accept_total += accept_stat;
            draws.push(current.q.clone());
        }
    }

    ChainRun {
        draws,
        divergences,
        mean_accept: if retained > 0 { accept_total / retained as f64 } else { 0.0 },
        step_size: eps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct StdGaussian {
        dim: usize,
    }

    impl LogDensity for StdGaussian {
        fn dim(&self) -> usize {
            self.dim
        }
        fn log_density_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
            let mut lp = 0.0;
            for (i, &x) in position.iter().enumerate() {
                grad[i] = -x;
                lp -= 0.5 * x * x;
            }
            lp
        }
        fn parameter_names(&self) -> Vec<String> {
            (0..self.dim).map(|i| format!("x{i}")).collect()
        }
    }

    #[test]
    fn leapfrog_conserves_energy_at_tiny_steps() {
        let target = StdGaussian { dim: 4 };
        let integ = Integrator { target: &target, inv_mass: vec![1.0; 4] };
        let q = vec![0.3, -1.2, 0.7, 2.0];
        let mut grad = vec![0.0; 4];
        let logp = target.log_density_grad(&q, &mut grad);
        let point = Point { q, p: vec![0.5, -0.25, 1.0, 0.1], grad, logp };
        let h0 = integ.hamiltonian(&point);
        let step = integ.leapfrog(&point, 1.0, 1e-6);
        let h1 = integ.hamiltonian(&step);
        assert!((h1 - h0).abs() < 1e-8, "energy drift {:.3e}", h1 - h0);
    }

    #[test]
    fn warmup_window_layout() {
        let (init, term, ends) = warmup_windows(1000);
        assert_eq!(init, 75);
        assert_eq!(term, 50);
        assert_eq!(*ends.last().unwrap(), 950);
        // Windows must be increasing and inside the slow phase.
        assert!(ends.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn chain_is_deterministic_for_fixed_rng() {
        let target = StdGaussian { dim: 3 };
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            run_chain(&target, &[0.1, 0.2, -0.3], 200, 100, 0.8, 10, &mut rng).draws
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }
}

