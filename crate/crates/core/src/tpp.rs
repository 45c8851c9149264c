//! Conditional intensity heads, the Monte Carlo non-event integral, and the
//! sequence log-likelihood.
//!
//! Between events `t_i` and `t_{i+1}` the intensity is a function of the
//! history vector `h_i` and the elapsed time `dt = t - t_i`. Three
//! parameterizations are supported:
//!
//! ```text
//! thp:   lambda_k = softplus(alpha_k dt + w_k . h + b_k)
//! rmtpp: lambda_k = exp(alpha_k dt + w_k . h + b_k)        (argument capped)
//! sahp:  lambda_k = softplus(mu_k + (eta_k - mu_k) exp(-gamma_k dt))
//!        with mu = gelu(W_mu h), eta = gelu(W_eta h),
//!        gamma = softplus(gelu(W_gamma h))   (decay kept non-negative)
//! ```
//!
//! The log-likelihood of a sequence sums `log lambda_{k_i}(t_i | h_{i-1})`
//! over events `i = 2..n` and subtracts the non-event integral over
//! `(t_1, t_n)`, estimated per interval by uniform Monte Carlo samples.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{gelu, softplus, NodeId, Tape};
use crate::error::ModelError;
use crate::params::{BoundParams, ParamFamily, ParamId, ParamSet};

/// Cap on the exp-head argument; beyond this the intensity saturates.
pub const RMTPP_ARG_CAP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityKind {
    Thp,
    Rmtpp,
    Sahp,
}

/// Softplus head: `softplus(alpha dt + W h + b)`.
#[derive(Debug, Clone)]
pub struct ThpHead {
    pub alpha: Array1<f64>,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Exponential head: `exp(alpha dt + W h + b)` with a capped argument.
#[derive(Debug, Clone)]
pub struct RmtppHead {
    pub alpha: Array1<f64>,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Decaying head: `softplus(mu + (eta - mu) exp(-gamma dt))`.
#[derive(Debug, Clone)]
pub struct SahpHead {
    pub w_mu: Array2<f64>,
    pub w_eta: Array2<f64>,
    pub w_gamma: Array2<f64>,
}

#[derive(Debug, Clone)]
pub enum IntensityHead {
    Thp(ThpHead),
    Rmtpp(RmtppHead),
    Sahp(SahpHead),
}

impl IntensityHead {
    pub fn kind(&self) -> IntensityKind {
        match self {
            IntensityHead::Thp(_) => IntensityKind::Thp,
            IntensityHead::Rmtpp(_) => IntensityKind::Rmtpp,
            IntensityHead::Sahp(_) => IntensityKind::Sahp,
        }
    }

    pub fn num_types(&self) -> usize {
        match self {
            IntensityHead::Thp(h) => h.weight.nrows(),
            IntensityHead::Rmtpp(h) => h.weight.nrows(),
            IntensityHead::Sahp(h) => h.w_mu.nrows(),
        }
    }

    /// Per-type intensity at elapsed time `dt` since the last event.
    pub fn intensity(&self, h: ArrayView1<f64>, dt: f64) -> Array1<f64> {
        debug_assert!(dt >= 0.0);
        match self {
            IntensityHead::Thp(head) => {
                let mut out = head.weight.dot(&h);
                for (k, v) in out.iter_mut().enumerate() {
                    *v = softplus(head.alpha[k] * dt + *v + head.bias[k]);
                }
                out
            }
            IntensityHead::Rmtpp(head) => {
                let mut out = head.weight.dot(&h);
                for (k, v) in out.iter_mut().enumerate() {
                    *v = (head.alpha[k] * dt + *v + head.bias[k]).min(RMTPP_ARG_CAP).exp();
                }
                out
            }
            IntensityHead::Sahp(head) => {
                let mu = head.w_mu.dot(&h).mapv(gelu);
                let eta = head.w_eta.dot(&h).mapv(gelu);
                let gamma = head.w_gamma.dot(&h).mapv(|x| softplus(gelu(x)));
                let mut out = Array1::zeros(mu.len());
                for k in 0..mu.len() {
                    let decay = (-gamma[k] * dt).exp();
                    out[k] = softplus(mu[k] + (eta[k] - mu[k]) * decay);
                }
                out
            }
        }
    }

    /// Total intensity summed over types.
    pub fn total_intensity(&self, h: ArrayView1<f64>, dt: f64) -> f64 {
        self.intensity(h, dt).sum()
    }
}

/// Intensity of the softplus head.
pub fn intensity_thp(h: ArrayView1<f64>, dt: f64, head: &ThpHead) -> Array1<f64> {
    IntensityHead::Thp(head.clone()).intensity(h, dt)
}

/// Intensity of the exponential head.
pub fn intensity_rmtpp(h: ArrayView1<f64>, dt: f64, head: &RmtppHead) -> Array1<f64> {
    IntensityHead::Rmtpp(head.clone()).intensity(h, dt)
}

/// Intensity of the decaying head.
pub fn intensity_sahp(h: ArrayView1<f64>, dt: f64, head: &SahpHead) -> Array1<f64> {
    IntensityHead::Sahp(head.clone()).intensity(h, dt)
}

/// Monte Carlo settings for the non-event integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MCConfig {
    pub samples_per_interval: usize,
    pub seed: u64,
}

impl Default for MCConfig {
    fn default() -> Self {
        Self { samples_per_interval: 20, seed: 0 }
    }
}

impl MCConfig {
    /// The per-sequence stream: same settings, seed mixed with the sequence id.
    pub fn for_sequence(&self, seq_id: &str) -> MCConfig {
        MCConfig { samples_per_interval: self.samples_per_interval, seed: self.seed ^ fnv1a(seq_id) }
    }
}

/// FNV-1a, pinned here so seed derivation never shifts under us.
pub fn fnv1a(s: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// One integrand sample: the (0-based) interval it falls in and the elapsed
/// time from that interval's left endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSample {
    pub interval: usize,
    pub offset: f64,
    /// `width / M`, the quadrature weight of this sample.
    pub weight: f64,
}

/// Draws `M` uniform offsets in `(0, width]` for every non-degenerate
/// inter-event interval. Zero-width intervals produce no samples (they
/// contribute nothing to the integral).
pub fn mc_samples(times: &[f64], mc: &MCConfig) -> Vec<McSample> {
    let m = mc.samples_per_interval.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
    let mut out = Vec::new();
    for i in 0..times.len().saturating_sub(1) {
        let width = times[i + 1] - times[i];
        if width <= 0.0 {
            continue;
        }
        for _ in 0..m {
            // (0, 1] so samples sit strictly inside the half-open interval
            let u = 1.0 - rng.gen::<f64>();
            out.push(McSample { interval: i, offset: width * u, weight: width / m as f64 });
        }
    }
    out
}

/// Monte Carlo estimate of the non-event integral over `(t_1, t_n)`:
/// per interval, the mean total intensity across `M` uniform samples times
/// the interval width, summed.
pub fn nonevent_integral_mc(
    history: &Array2<f64>,
    times: &[f64],
    head: &IntensityHead,
    mc: &MCConfig,
) -> f64 {
    let mut total = 0.0;
    for s in mc_samples(times, mc) {
        total += s.weight * head.total_intensity(history.row(s.interval), s.offset);
    }
    total
}

/// Sequence log-likelihood: event terms for `i = 2..n` (each using the
/// previous event's history vector and the elapsed gap) minus the non-event
/// integral. `history` holds `h_1..h_n` as rows.
pub fn sequence_log_likelihood(
    times: &[f64],
    type_ids: &[usize],
    history: &Array2<f64>,
    head: &IntensityHead,
    mc: &MCConfig,
) -> Result<f64, ModelError> {
    let n = times.len();
    if n < 2 {
        return Err(ModelError::SequenceTooShort { len: n });
    }
    debug_assert_eq!(history.nrows(), n);
    let mut event_sum = 0.0;
    for i in 1..n {
        let dt = times[i] - times[i - 1];
        let lam = head.intensity(history.row(i - 1), dt);
        let lam_k = lam[type_ids[i]];
        if !lam_k.is_finite() || lam_k <= 0.0 {
            return Err(ModelError::ZeroIntensity { index: i });
        }
        event_sum += lam_k.ln();
    }
    Ok(event_sum - nonevent_integral_mc(history, times, head, mc))
}

// ---------------------------------------------------------------------------
// Parameter registration and tape graphs
// ---------------------------------------------------------------------------

/// Parameter ids of an intensity head inside a [`ParamSet`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum IntensityHeadIds {
    Thp { alpha: ParamId, weight: ParamId, bias: ParamId },
    Rmtpp { alpha: ParamId, weight: ParamId, bias: ParamId },
    Sahp { w_mu: ParamId, w_eta: ParamId, w_gamma: ParamId },
}

impl IntensityHeadIds {
    pub fn kind(&self) -> IntensityKind {
        match self {
            IntensityHeadIds::Thp { .. } => IntensityKind::Thp,
            IntensityHeadIds::Rmtpp { .. } => IntensityKind::Rmtpp,
            IntensityHeadIds::Sahp { .. } => IntensityKind::Sahp,
        }
    }
}

/// Registers a freshly initialized head for `num_types` types over `hidden`
/// dimensions.
pub fn init_intensity_head(
    params: &mut ParamSet,
    kind: IntensityKind,
    num_types: usize,
    hidden: usize,
    rng: &mut ChaCha8Rng,
) -> IntensityHeadIds {
    let fam = ParamFamily::IntensityHead;
    let norm = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
        crate::backbone::normal_matrix(rng, r, c, 0.02)
    };
    match kind {
        IntensityKind::Thp => IntensityHeadIds::Thp {
            alpha: params.add("intensity.alpha", fam, norm(rng, 1, num_types)),
            weight: params.add("intensity.weight", fam, norm(rng, num_types, hidden)),
            bias: params.add("intensity.bias", fam, norm(rng, 1, num_types)),
        },
        IntensityKind::Rmtpp => IntensityHeadIds::Rmtpp {
            alpha: params.add("intensity.alpha", fam, norm(rng, 1, num_types)),
            weight: params.add("intensity.weight", fam, norm(rng, num_types, hidden)),
            bias: params.add("intensity.bias", fam, norm(rng, 1, num_types)),
        },
        IntensityKind::Sahp => IntensityHeadIds::Sahp {
            w_mu: params.add("intensity.w_mu", fam, norm(rng, num_types, hidden)),
            w_eta: params.add("intensity.w_eta", fam, norm(rng, num_types, hidden)),
            w_gamma: params.add("intensity.w_gamma", fam, norm(rng, num_types, hidden)),
        },
    }
}

/// Materializes plain head values from the parameter set.
pub fn head_from_params(params: &ParamSet, ids: &IntensityHeadIds) -> IntensityHead {
    match ids {
        IntensityHeadIds::Thp { alpha, weight, bias } => IntensityHead::Thp(ThpHead {
            alpha: params.value(*alpha).row(0).to_owned(),
            weight: params.value(*weight).clone(),
            bias: params.value(*bias).row(0).to_owned(),
        }),
        IntensityHeadIds::Rmtpp { alpha, weight, bias } => IntensityHead::Rmtpp(RmtppHead {
            alpha: params.value(*alpha).row(0).to_owned(),
            weight: params.value(*weight).clone(),
            bias: params.value(*bias).row(0).to_owned(),
        }),
        IntensityHeadIds::Sahp { w_mu, w_eta, w_gamma } => IntensityHead::Sahp(SahpHead {
            w_mu: params.value(*w_mu).clone(),
            w_eta: params.value(*w_eta).clone(),
            w_gamma: params.value(*w_gamma).clone(),
        }),
    }
}

/// Tape node of the `m x K` intensity matrix for `m` (history row, elapsed
/// time) pairs.
pub fn intensity_matrix_node(
    tape: &mut Tape,
    h_rows: NodeId,
    dts: &[f64],
    ids: &IntensityHeadIds,
    bound: &BoundParams,
    num_types: usize,
) -> NodeId {
    let m = dts.len();
    debug_assert_eq!(tape.value(h_rows).nrows(), m);
    let dt_col = Array2::from_shape_fn((m, 1), |(r, _)| dts[r]);
    match ids {
        IntensityHeadIds::Thp { alpha, weight, bias }
        | IntensityHeadIds::Rmtpp { alpha, weight, bias } => {
            let wh = tape.matmul_tb(h_rows, bound.node(*weight));
            let dt_node = tape.constant(dt_col);
            let a_dt = tape.matmul(dt_node, bound.node(*alpha));
            let sum = tape.add(wh, a_dt);
            let logits = tape.add_row(sum, bound.node(*bias));
            match ids.kind() {
                IntensityKind::Thp => tape.softplus_node(logits),
                _ => tape.exp_clamp(logits, RMTPP_ARG_CAP),
            }
        }
        IntensityHeadIds::Sahp { w_mu, w_eta, w_gamma } => {
            let mu_lin = tape.matmul_tb(h_rows, bound.node(*w_mu));
            let mu = tape.gelu_node(mu_lin);
            let eta_lin = tape.matmul_tb(h_rows, bound.node(*w_eta));
            let eta = tape.gelu_node(eta_lin);
            let g_lin = tape.matmul_tb(h_rows, bound.node(*w_gamma));
            let g_act = tape.gelu_node(g_lin);
            let gamma = tape.softplus_node(g_act);
            let dt_mat =
                tape.constant(Array2::from_shape_fn((m, num_types), |(r, _)| dts[r]));
            let g_dt = tape.mul(gamma, dt_mat);
            let neg = tape.scale(g_dt, -1.0);
            let decay = tape.exp_clamp(neg, RMTPP_ARG_CAP);
            let neg_mu = tape.scale(mu, -1.0);
            let diff = tape.add(eta, neg_mu);
            let transient = tape.mul(diff, decay);
            let inner = tape.add(mu, transient);
            tape.softplus_node(inner)
        }
    }
}

/// Builds the log-likelihood graph for one sequence given the node holding
/// `h_1..h_n`. Returns the scalar LL node.
#[allow(clippy::too_many_arguments)]
pub fn loglik_node(
    tape: &mut Tape,
    history: NodeId,
    times: &[f64],
    type_ids: &[usize],
    ids: &IntensityHeadIds,
    bound: &BoundParams,
    num_types: usize,
    mc: &MCConfig,
) -> Result<NodeId, ModelError> {
    let n = times.len();
    if n < 2 {
        return Err(ModelError::SequenceTooShort { len: n });
    }

    // event terms: lambda_{k_i}(t_i | h_{i-1})
    let prev_rows: Vec<usize> = (0..n - 1).collect();
    let h_prev = tape.gather_rows(history, prev_rows);
    let gaps: Vec<f64> = (1..n).map(|i| times[i] - times[i - 1]).collect();
    let lam = intensity_matrix_node(tape, h_prev, &gaps, ids, bound, num_types);
    let coords: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, type_ids[i])).collect();
    let lam_at_events = tape.gather_entries(lam, coords);
    for (row, v) in tape.value(lam_at_events).iter().enumerate() {
        if !v.is_finite() || *v <= 0.0 {
            return Err(ModelError::ZeroIntensity { index: row + 1 });
        }
    }
    let log_lam = tape.log(lam_at_events);
    let event_sum = tape.sum_all(log_lam);

    // non-event integral over (t_1, t_n)
    let samples = mc_samples(times, mc);
    if samples.is_empty() {
        return Ok(event_sum);
    }
    let rows: Vec<usize> = samples.iter().map(|s| s.interval).collect();
    let offsets: Vec<f64> = samples.iter().map(|s| s.offset).collect();
    let h_rep = tape.gather_rows(history, rows);
    let lam_mc = intensity_matrix_node(tape, h_rep, &offsets, ids, bound, num_types);
    let weights =
        Array2::from_shape_fn((samples.len(), num_types), |(r, _)| samples[r].weight);
    let integral = tape.weighted_sum_all(lam_mc, weights);
    let neg_integral = tape.scale(integral, -1.0);
    Ok(tape.add(event_sum, neg_integral))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{bind_params, TrainableScope};
    use ndarray::arr1;

    fn const_rate_head(k: usize, hidden: usize, rate: f64) -> IntensityHead {
        // softplus(b) = rate  =>  b = ln(e^rate - 1)
        let b = (rate.exp() - 1.0).ln();
        IntensityHead::Thp(ThpHead {
            alpha: Array1::zeros(k),
            weight: Array2::zeros((k, hidden)),
            bias: Array1::from_elem(k, b),
        })
    }

    #[test]
    fn thp_zero_args_give_log_two() {
        let head = ThpHead {
            alpha: Array1::zeros(3),
            weight: Array2::zeros((3, 4)),
            bias: Array1::zeros(3),
        };
        let lam = intensity_thp(arr1(&[0.0; 4]).view(), 0.7, &head);
        for v in &lam {
            assert!((v - 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn thp_bias_solves_unit_rate() {
        let head = const_rate_head(2, 4, 1.0);
        let lam = head.intensity(arr1(&[0.3, -0.2, 0.5, 0.0]).view(), 1.3);
        for v in &lam {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rmtpp_examples() {
        let head = RmtppHead {
            alpha: Array1::zeros(2),
            weight: Array2::zeros((2, 3)),
            bias: Array1::zeros(2),
        };
        let lam = intensity_rmtpp(arr1(&[0.0; 3]).view(), 0.0, &head);
        assert_eq!(lam, arr1(&[1.0, 1.0]));

        let head = RmtppHead {
            alpha: Array1::ones(1),
            weight: Array2::zeros((1, 3)),
            bias: Array1::zeros(1),
        };
        let lam = intensity_rmtpp(arr1(&[0.0; 3]).view(), 2f64.ln(), &head);
        assert!((lam[0] - 2.0).abs() < 1e-14);
        // monotone in dt for positive alpha
        let lo = intensity_rmtpp(arr1(&[0.0; 3]).view(), 0.5, &head)[0];
        let hi = intensity_rmtpp(arr1(&[0.0; 3]).view(), 1.5, &head)[0];
        assert!(hi > lo);
        // cap prevents overflow
        let big = intensity_rmtpp(arr1(&[0.0; 3]).view(), 1e9, &head)[0];
        assert!(big.is_finite());
    }

    #[test]
    fn sahp_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let head = SahpHead {
            w_mu: crate::backbone::normal_matrix(&mut rng, 2, 3, 0.5),
            w_eta: crate::backbone::normal_matrix(&mut rng, 2, 3, 0.5),
            w_gamma: crate::backbone::normal_matrix(&mut rng, 2, 3, 0.5),
        };
        // h = 0: gelu(0) = 0 so lambda = softplus(0)
        let lam0 = intensity_sahp(arr1(&[0.0; 3]).view(), 0.4, &head);
        for v in &lam0 {
            assert!((v - 2f64.ln()).abs() < 1e-15);
        }
        let h = arr1(&[0.7, -1.1, 0.4]);
        let mu = head.w_mu.dot(&h).mapv(gelu);
        let eta = head.w_eta.dot(&h).mapv(gelu);
        // dt = 0 gives softplus(eta); dt -> inf gives softplus(mu)
        let at0 = intensity_sahp(h.view(), 0.0, &head);
        let at_inf = intensity_sahp(h.view(), 1e9, &head);
        for k in 0..2 {
            assert!((at0[k] - softplus(eta[k])).abs() < 1e-12);
            assert!((at_inf[k] - softplus(mu[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn intensities_stay_positive_on_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let heads = [
            IntensityHead::Thp(ThpHead {
                alpha: arr1(&[0.5, -0.5]),
                weight: crate::backbone::normal_matrix(&mut rng, 2, 4, 1.0),
                bias: arr1(&[0.1, -0.1]),
            }),
            IntensityHead::Rmtpp(RmtppHead {
                alpha: arr1(&[0.5, -0.5]),
                weight: crate::backbone::normal_matrix(&mut rng, 2, 4, 1.0),
                bias: arr1(&[0.1, -0.1]),
            }),
            IntensityHead::Sahp(SahpHead {
                w_mu: crate::backbone::normal_matrix(&mut rng, 2, 4, 1.0),
                w_eta: crate::backbone::normal_matrix(&mut rng, 2, 4, 1.0),
                w_gamma: crate::backbone::normal_matrix(&mut rng, 2, 4, 1.0),
            }),
        ];
        for head in &heads {
            for _ in 0..1000 {
                let h = Array1::from_shape_fn(4, |_| rng.gen_range(-3.0..3.0));
                let dt = rng.gen_range(0.0..10.0);
                for v in &head.intensity(h.view(), dt) {
                    assert!(*v > 0.0, "non-positive intensity from {:?}", head.kind());
                }
            }
        }
    }

    #[test]
    fn mc_integral_exact_for_constant_intensity() {
        let k = 3;
        let head = const_rate_head(k, 2, 0.75);
        let times = [0.0, 10.0];
        let history = Array2::zeros((2, 2));
        for m in [1, 7, 20] {
            let mc = MCConfig { samples_per_interval: m, seed: 5 };
            let got = nonevent_integral_mc(&history, &times, &head, &mc);
            assert!((got - 0.75 * k as f64 * 10.0).abs() < 1e-9, "m={m} got {got}");
        }
    }

    #[test]
    fn mc_integral_skips_zero_width_intervals() {
        let head = const_rate_head(1, 2, 1.0);
        let history = Array2::zeros((3, 2));
        let mc = MCConfig::default();
        let with_tie = nonevent_integral_mc(&history, &[0.0, 0.0, 4.0], &head, &mc);
        assert!((with_tie - 4.0).abs() < 1e-12);
    }

    #[test]
    fn mc_converges_to_trapezoid_for_smooth_intensity() {
        // single interval, lambda(dt) = softplus(0.8 dt - 0.3)
        let head = IntensityHead::Thp(ThpHead {
            alpha: arr1(&[0.8]),
            weight: Array2::zeros((1, 2)),
            bias: arr1(&[-0.3]),
        });
        let times = [0.0, 5.0];
        let history = Array2::zeros((2, 2));
        let n = 1000;
        let step = 5.0 / n as f64;
        let f = |dt: f64| softplus(0.8 * dt - 0.3);
        let mut quad = 0.5 * (f(0.0) + f(5.0));
        for j in 1..n {
            quad += f(j as f64 * step);
        }
        quad *= step;
        let mc = MCConfig { samples_per_interval: 10_000, seed: 3 };
        let got = nonevent_integral_mc(&history, &times, &head, &mc);
        assert!(
            (got - quad).abs() / quad < 0.005,
            "mc {got} vs trapezoid {quad}"
        );
    }

    #[test]
    fn loglik_matches_poisson_closed_form() {
        let head = const_rate_head(1, 2, 1.0);
        let times = [0.0, 1.0, 2.0, 3.0];
        let types = [0usize, 0, 0, 0];
        let history = Array2::zeros((4, 2));
        let mc = MCConfig::default();
        let ll = sequence_log_likelihood(&times, &types, &history, &head, &mc).unwrap();
        assert!((ll - (-3.0)).abs() < 1e-9);

        let head2 = const_rate_head(1, 2, 2.0);
        let ll2 = sequence_log_likelihood(&times, &types, &history, &head2, &mc).unwrap();
        let expect = 3.0 * 2f64.ln() - 2.0 * 3.0;
        assert!((ll2 - expect).abs() < 1e-9, "{ll2} vs {expect}");
        assert!((expect - (-3.9206)).abs() < 1e-4);
    }

    #[test]
    fn loglik_zero_width_window() {
        let head = const_rate_head(1, 2, 1.0);
        let history = Array2::zeros((2, 2));
        let ll = sequence_log_likelihood(&[0.0, 0.0], &[0, 0], &history, &head, &MCConfig::default())
            .unwrap();
        // integral term is 0; only the event term log(1) remains
        assert!(ll.abs() < 1e-12);
    }

    #[test]
    fn loglik_rejects_single_event() {
        let head = const_rate_head(1, 2, 1.0);
        let history = Array2::zeros((1, 2));
        let err = sequence_log_likelihood(&[0.5], &[0], &history, &head, &MCConfig::default())
            .unwrap_err();
        assert!(matches!(err, ModelError::SequenceTooShort { len: 1 }));
    }

    #[test]
    fn graph_loglik_matches_plain_for_all_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let hidden = 5;
        let k = 3;
        let times = [0.0, 0.4, 1.9, 2.0, 3.7];
        let types = [0usize, 2, 1, 1, 0];
        let history =
            Array2::from_shape_fn((times.len(), hidden), |_| rng.gen_range(-1.0..1.0));
        let mc = MCConfig { samples_per_interval: 4, seed: 99 };
        for kind in [IntensityKind::Thp, IntensityKind::Rmtpp, IntensityKind::Sahp] {
            let mut params = ParamSet::new();
            let ids = init_intensity_head(&mut params, kind, k, hidden, &mut rng);
            let head = head_from_params(&params, &ids);
            let plain =
                sequence_log_likelihood(&times, &types, &history, &head, &mc).unwrap();

            let mut tape = Tape::new();
            let bound = bind_params(&mut tape, &params, TrainableScope::All);
            let h_node = tape.constant(history.clone());
            let ll =
                loglik_node(&mut tape, h_node, &times, &types, &ids, &bound, k, &mc).unwrap();
            let graph = tape.value(ll)[[0, 0]];
            assert!(
                (plain - graph).abs() < 1e-12,
                "{kind:?}: plain {plain} vs graph {graph}"
            );
        }
    }

    #[test]
    fn later_history_rows_do_not_affect_earlier_event_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let head = IntensityHead::Thp(ThpHead {
            alpha: arr1(&[0.2, 0.1]),
            weight: crate::backbone::normal_matrix(&mut rng, 2, 3, 0.5),
            bias: arr1(&[0.0, 0.3]),
        });
        let times = [0.0, 1.0, 2.0, 3.0];
        let types = [0usize, 1, 0, 1];
        let mut history = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));
        let event_term = |hist: &Array2<f64>, i: usize| {
            head.intensity(hist.row(i - 1), times[i] - times[i - 1])[types[i]].ln()
        };
        let before: Vec<f64> = (1..=2).map(|i| event_term(&history, i)).collect();
        // change h_3 and h_4 (rows 2, 3): events 2 and 3 (1-based) are untouched
        history.row_mut(2).fill(9.0);
        history.row_mut(3).fill(-9.0);
        let after: Vec<f64> = (1..=2).map(|i| event_term(&history, i)).collect();
        assert_eq!(before, after);
    }
}
