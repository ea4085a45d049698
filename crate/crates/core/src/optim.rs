//! Derivative-free Nelder-Mead minimizer used by the prior-elicitation
//! searches.

pub(crate) struct NelderMead {
    pub max_evals: usize,
    pub tol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead { max_evals: 2000, tol: 1e-10 }
    }
}

pub(crate) struct OptimResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

impl NelderMead {
    /// Minimize `f` starting from `start` with per-coordinate initial steps.
    pub fn minimize<F: FnMut(&[f64]) -> f64>(
        &self,
        mut f: F,
        start: &[f64],
        steps: &[f64],
    ) -> OptimResult {
        let dim = start.len();
        assert_eq!(steps.len(), dim);
        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
            *evals += 1;
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };

        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
        let v0 = eval(start, &mut evals);
        simplex.push((start.to_vec(), v0));
        for i in 0..dim {
            let mut p = start.to_vec();
            p[i] += steps[i];
            let v = eval(&p, &mut evals);
            simplex.push((p, v));
        }

        while evals < self.max_evals {
            simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            let best = simplex[0].1;
            let worst = simplex[dim].1;
            if (worst - best).abs() <= self.tol * (1.0 + best.abs()) {
                return OptimResult {
                    point: simplex[0].0.clone(),
                    value: best,
                    evals,
                    converged: true,
                };
            }

            // Centroid of all but the worst.
            let mut centroid = vec![0.0; dim];
            for (p, _) in &simplex[..dim] {
                for i in 0..dim {
                    centroid[i] += p[i] / dim as f64;
                }
            }

            let reflect: Vec<f64> = (0..dim)
                .map(|i| centroid[i] + alpha * (centroid[i] - simplex[dim].0[i]))
                .collect();
            let v_reflect = eval(&reflect, &mut evals);

            if v_reflect < simplex[0].1 {
                let expand: Vec<f64> = (0..dim)
                    .map(|i| centroid[i] + gamma * (reflect[i] - centroid[i]))
                    .collect();
                let v_expand = eval(&expand, &mut evals);
                simplex[dim] = if v_expand < v_reflect {
                    (expand, v_expand)
                } else {
                    (reflect, v_reflect)
                };
            } else if v_reflect < simplex[dim - 1].1 {
                simplex[dim] = (reflect, v_reflect);
            } else {
                let contract: Vec<f64> = (0..dim)
                    .map(|i| centroid[i] + rho * (simplex[dim].0[i] - centroid[i]))
                    .collect();
                let v_contract = eval(&contract, &mut evals);
                if v_contract < simplex[dim].1 {
                    simplex[dim] = (contract, v_contract);
                } else {
                    // Shrink toward the best vertex.
                    let best_point = simplex[0].0.clone();
                    for entry in simplex.iter_mut().skip(1) {
                        let p: Vec<f64> = (0..dim)
                            .map(|i| best_point[i] + sigma * (entry.0[i] - best_point[i]))
                            .collect();
                        let v = eval(&p, &mut evals);
                        *entry = (p, v);
                    }
                }
            }
        }

        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        OptimResult {
            point: simplex[0].0.clone(),
            value: simplex[0].1,
            evals,
            converged: false,
        }
    }
}
