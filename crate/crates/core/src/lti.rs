//! Brunovsky-form LTI systems: generation, simulation and ground truth.
//!
//! The system model is
//!
//! ```text
//! h[t+1] = A h[t] + B u[t]
//! y[t]   = C h[t] + D u[t] + zeta[t]
//! ```
//!
//! where `A` and `B` are in Brunovsky canonical form: `A` is the block
//! companion matrix of the characteristic polynomial
//! `q(z) = z^n + a_1 z^(n-1) + ... + a_n` with `m x m` identity blocks, and
//! `B = [0; ...; 0; I_m]`. The hidden state has dimension `n * m`.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SysIdError};

pub type C64 = Complex<f64>;

/// Problem dimensions: block order `n`, input width `m`, output width `p`.
///
/// The hidden state dimension of the assembled system is `n * m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemDims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
}

impl SystemDims {
    pub fn new(n: usize, m: usize, p: usize) -> Result<Self> {
        if n < 1 || m < 1 || p < 1 {
            return Err(SysIdError::Dimension(format!(
                "dims must be >= 1, got n={n} m={m} p={p}"
            )));
        }
        Ok(Self { n, m, p })
    }

    /// Assembled hidden-state dimension `n * m`.
    pub fn state_dim(&self) -> usize {
        self.n * self.m
    }

    /// Number of recovery unknowns: `n` coefficients plus all of `C`.
    pub fn unknown_count(&self) -> usize {
        self.n + self.n * self.m * self.p
    }

    /// Number of matching frequencies used by the recovery grid.
    pub fn frequency_count(&self) -> usize {
        self.n + self.p * self.n * self.m
    }
}

/// A stable LTI system in Brunovsky canonical form.
///
/// `A` is fully determined by `char_coeffs` (and `m`); `B` is fixed. The
/// free parameters are the characteristic coefficients, `C` and `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrunovskySystem {
    dims: SystemDims,
    char_coeffs: Vec<f64>,
    c_matrix: DMatrix<f64>,
    d_matrix: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct SystemJson {
    n: usize,
    m: usize,
    p: usize,
    char_coeffs: Vec<f64>,
    #[serde(rename = "C")]
    c: Vec<f64>,
    #[serde(rename = "D")]
    d: Vec<f64>,
}

impl BrunovskySystem {
    /// Builds a system from its free parameters, enforcing stability.
    pub fn new(
        dims: SystemDims,
        char_coeffs: Vec<f64>,
        c_matrix: DMatrix<f64>,
        d_matrix: DMatrix<f64>,
    ) -> Result<Self> {
        if char_coeffs.len() != dims.n {
            return Err(SysIdError::Dimension(format!(
                "expected {} characteristic coefficients, got {}",
                dims.n,
                char_coeffs.len()
            )));
        }
        if c_matrix.nrows() != dims.p || c_matrix.ncols() != dims.state_dim() {
            return Err(SysIdError::Dimension(format!(
                "C must be {}x{}, got {}x{}",
                dims.p,
                dims.state_dim(),
                c_matrix.nrows(),
                c_matrix.ncols()
            )));
        }
        if d_matrix.nrows() != dims.p || d_matrix.ncols() != dims.m {
            return Err(SysIdError::Dimension(format!(
                "D must be {}x{}, got {}x{}",
                dims.p,
                dims.m,
                d_matrix.nrows(),
                d_matrix.ncols()
            )));
        }
        let finite = char_coeffs.iter().all(|a| a.is_finite())
            && c_matrix.iter().all(|v| v.is_finite())
            && d_matrix.iter().all(|v| v.is_finite());
        if !finite {
            return Err(SysIdError::InvalidParameter(
                "system parameters must be finite".into(),
            ));
        }
        let sys = Self {
            dims,
            char_coeffs,
            c_matrix,
            d_matrix,
        };
        let rho = sys.spectral_radius();
        if !(rho < 1.0) {
            return Err(SysIdError::InvalidParameter(format!(
                "system is not stable: spectral radius {rho} >= 1"
            )));
        }
        Ok(sys)
    }

    pub fn dims(&self) -> SystemDims {
        self.dims
    }

    /// Characteristic coefficients `a_1, ..., a_n` of `q(z)`.
    pub fn char_coeffs(&self) -> &[f64] {
        &self.char_coeffs
    }

    pub fn c_matrix(&self) -> &DMatrix<f64> {
        &self.c_matrix
    }

    pub fn d_matrix(&self) -> &DMatrix<f64> {
        &self.d_matrix
    }

    /// Eigenvalues of `A`, without block multiplicity: the roots of `q(z)`.
    ///
    /// The assembled `A` carries each root with multiplicity `m`.
    pub fn roots(&self) -> Vec<C64> {
        companion_roots(&self.char_coeffs)
    }

    pub fn spectral_radius(&self) -> f64 {
        self.roots().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        let j = SystemJson {
            n: self.dims.n,
            m: self.dims.m,
            p: self.dims.p,
            char_coeffs: self.char_coeffs.clone(),
            c: row_major(&self.c_matrix),
            d: row_major(&self.d_matrix),
        };
        serde_json::to_string_pretty(&j).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: SystemJson = serde_json::from_str(text)?;
        let dims = SystemDims::new(j.n, j.m, j.p)?;
        if j.c.len() != dims.p * dims.state_dim() || j.d.len() != dims.p * dims.m {
            return Err(SysIdError::Dimension(
                "C/D payload length does not match dims".into(),
            ));
        }
        let c = DMatrix::from_row_slice(dims.p, dims.state_dim(), &j.c);
        let d = DMatrix::from_row_slice(dims.p, dims.m, &j.d);
        Self::new(dims, j.char_coeffs, c, d)
    }
}

fn row_major(mat: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(mat.nrows() * mat.ncols());
    for r in 0..mat.nrows() {
        for c in 0..mat.ncols() {
            out.push(mat[(r, c)]);
        }
    }
    out
}

/// Scalar companion matrix of `q(z)`: ones on the superdiagonal, bottom row
/// `[-a_n, ..., -a_1]`. Its eigenvalues are the roots of `q`.
pub fn companion_matrix(char_coeffs: &[f64]) -> DMatrix<f64> {
    let n = char_coeffs.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        a[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = -char_coeffs[n - 1 - j];
    }
    a
}

/// Roots of `q(z)` via the companion-matrix eigenvalue problem.
pub fn companion_roots(char_coeffs: &[f64]) -> Vec<C64> {
    companion_matrix(char_coeffs)
        .complex_eigenvalues()
        .iter()
        .copied()
        .collect()
}

/// Monic polynomial product: both inputs and the output list coefficients
/// highest power first, with the leading 1 included.
fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Expands real coefficients from conjugate root pairs plus an optional real
/// root. Pairs are given as `(modulus, phase)`.
pub fn char_coeffs_from_roots(pairs: &[(f64, f64)], real_root: Option<f64>) -> Vec<f64> {
    let mut poly = vec![1.0];
    for &(r, phi) in pairs {
        // (z - re^{i phi})(z - re^{-i phi}) = z^2 - 2 r cos(phi) z + r^2
        poly = poly_mul(&poly, &[1.0, -2.0 * r * phi.cos(), r * r]);
    }
    if let Some(r) = real_root {
        poly = poly_mul(&poly, &[1.0, -r]);
    }
    poly.remove(0);
    poly
}

/// Draws a random stable system: conjugate root pairs with modulus in
/// `(0, rho_max]` and phase in `(0, pi)`, one extra real root in
/// `(-rho_max, rho_max)` when `n` is odd, and standard-normal `C`, `D`.
pub fn generate_system(dims: SystemDims, rho_max: f64, seed: u64) -> Result<BrunovskySystem> {
    if !(rho_max > 0.0 && rho_max < 1.0) {
        return Err(SysIdError::InvalidParameter(format!(
            "rho_max must lie in (0, 1), got {rho_max}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pairs = dims.n / 2;
    let coeffs = loop {
        let mut pairs = Vec::with_capacity(n_pairs);
        for _ in 0..n_pairs {
            let r = rho_max * (1.0 - rng.gen::<f64>());
            let mut phi = rng.gen_range(0.0..std::f64::consts::PI);
            while phi == 0.0 {
                phi = rng.gen_range(0.0..std::f64::consts::PI);
            }
            pairs.push((r, phi));
        }
        let real_root = if dims.n % 2 == 1 {
            Some(rng.gen_range(-rho_max..rho_max))
        } else {
            None
        };
        let coeffs = char_coeffs_from_roots(&pairs, real_root);
        // Numerical safety for large n; effectively never triggers at desk scale.
        if coeffs.iter().all(|c| c.abs() <= 1e12) {
            break coeffs;
        }
    };
    let state = dims.state_dim();
    let c = DMatrix::from_fn(dims.p, state, |_, _| rng.sample(StandardNormal));
    let d = DMatrix::from_fn(dims.p, dims.m, |_, _| rng.sample(StandardNormal));
    BrunovskySystem::new(dims, coeffs, c, d)
}

/// Block companion matrix with `m x m` identity blocks: the Brunovsky `A`
/// for the given coefficients, with no stability requirement.
pub fn companion_block_matrix(char_coeffs: &[f64], m: usize) -> DMatrix<f64> {
    let n = char_coeffs.len();
    let nm = n * m;
    let mut a = DMatrix::zeros(nm, nm);
    for blk in 0..n.saturating_sub(1) {
        for k in 0..m {
            a[(blk * m + k, (blk + 1) * m + k)] = 1.0;
        }
    }
    for blk in 0..n {
        // Bottom block row: [-a_n I, -a_{n-1} I, ..., -a_1 I].
        let coeff = -char_coeffs[n - 1 - blk];
        for k in 0..m {
            a[((n - 1) * m + k, blk * m + k)] = coeff;
        }
    }
    a
}

/// Assembles the Brunovsky `A` ((nm)x(nm)) and `B` ((nm)xm) matrices.
pub fn assemble_state_matrices(sys: &BrunovskySystem) -> (DMatrix<f64>, DMatrix<f64>) {
    let SystemDims { n, m, .. } = sys.dims();
    let a = companion_block_matrix(sys.char_coeffs(), m);
    let mut b = DMatrix::zeros(n * m, m);
    for k in 0..m {
        b[((n - 1) * m + k, k)] = 1.0;
    }
    (a, b)
}

/// A recorded input/output trajectory.
///
/// `hidden_states[k]` (when present) is the state at time `k + 1`, i.e. the
/// state that produced `outputs[k]`; the recursion
/// `h[t+1] = A h[t] + B u[t]` links consecutive entries.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub hidden_states: Option<Vec<DVector<f64>>>,
    pub input_variances: DVector<f64>,
    pub meas_noise_variances: DVector<f64>,
    pub initial_state: DVector<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Writes `t,u_1..u_m,y_1..y_p` rows, one per sample, t starting at 1.
    pub fn to_csv(&self) -> String {
        let m = self.inputs.first().map_or(0, |u| u.len());
        let p = self.outputs.first().map_or(0, |y| y.len());
        let mut out = String::from("t");
        for i in 1..=m {
            out.push_str(&format!(",u_{i}"));
        }
        for i in 1..=p {
            out.push_str(&format!(",y_{i}"));
        }
        out.push('\n');
        for (k, (u, y)) in self.inputs.iter().zip(&self.outputs).enumerate() {
            out.push_str(&format!("{}", k + 1));
            for v in u.iter() {
                out.push_str(&format!(",{v:.17e}"));
            }
            for v in y.iter() {
                out.push_str(&format!(",{v:.17e}"));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the CSV emitted by [`Trajectory::to_csv`]. Hidden states and
    /// variance metadata are not part of the format: variances come back
    /// zeroed, the initial state empty, hidden states `None`. Input and
    /// output widths are inferred from the header.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| SysIdError::Io("empty trajectory file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        let m = cols.iter().filter(|c| c.starts_with("u_")).count();
        let p = cols.iter().filter(|c| c.starts_with("y_")).count();
        if m == 0 || p == 0 || cols.len() != 1 + m + p {
            return Err(SysIdError::Io(format!("bad trajectory header: {header}")));
        }
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .skip(1)
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| SysIdError::Io(format!("bad value {s:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != m + p {
                return Err(SysIdError::Io(format!("bad trajectory row: {line}")));
            }
            inputs.push(DVector::from_row_slice(&vals[..m]));
            outputs.push(DVector::from_row_slice(&vals[m..]));
        }
        Ok(Trajectory {
            inputs,
            outputs,
            hidden_states: None,
            input_variances: DVector::zeros(m),
            meas_noise_variances: DVector::zeros(p),
            initial_state: DVector::zeros(0),
        })
    }
}

/// Streaming simulator: yields `(u_t, y_t)` pairs one at a time with O(state)
/// memory, for the online estimators.
pub struct TrajectoryStream {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    input_std: DVector<f64>,
    noise_std: DVector<f64>,
    process_std: Option<DVector<f64>>,
    state: DVector<f64>,
    rng: ChaCha8Rng,
}

impl TrajectoryStream {
    pub fn new(
        sys: &BrunovskySystem,
        input_variances: &DVector<f64>,
        meas_noise_variances: &DVector<f64>,
        process_noise_variances: Option<&DVector<f64>>,
        h0: DVector<f64>,
        seed: u64,
    ) -> Result<Self> {
        let dims = sys.dims();
        check_variances(
            dims,
            input_variances,
            meas_noise_variances,
            process_noise_variances,
        )?;
        if h0.len() != dims.state_dim() {
            return Err(SysIdError::Dimension(format!(
                "h0 must have length {}, got {}",
                dims.state_dim(),
                h0.len()
            )));
        }
        let (a, b) = assemble_state_matrices(sys);
        Ok(Self {
            a,
            b,
            c: sys.c_matrix().clone(),
            d: sys.d_matrix().clone(),
            input_std: input_variances.map(f64::sqrt),
            noise_std: meas_noise_variances.map(f64::sqrt),
            process_std: process_noise_variances.map(|v| v.map(f64::sqrt)),
            state: h0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl Iterator for TrajectoryStream {
    type Item = (DVector<f64>, DVector<f64>);

    fn next(&mut self) -> Option<Self::Item> {
        let u = DVector::from_fn(self.input_std.len(), |i, _| {
            let g: f64 = self.rng.sample(StandardNormal);
            g * self.input_std[i]
        });
        let zeta = DVector::from_fn(self.noise_std.len(), |i, _| {
            let g: f64 = self.rng.sample(StandardNormal);
            g * self.noise_std[i]
        });
        let y = &self.c * &self.state + &self.d * &u + zeta;
        let mut next = &self.a * &self.state + &self.b * &u;
        if let Some(ps) = &self.process_std {
            for i in 0..next.len() {
                let g: f64 = self.rng.sample(StandardNormal);
                next[i] += g * ps[i];
            }
        }
        self.state = next;
        Some((u, y))
    }
}

fn check_variances(
    dims: SystemDims,
    input_variances: &DVector<f64>,
    meas_noise_variances: &DVector<f64>,
    process_noise_variances: Option<&DVector<f64>>,
) -> Result<()> {
    if input_variances.len() != dims.m {
        return Err(SysIdError::Dimension(format!(
            "input variance vector must have length {}, got {}",
            dims.m,
            input_variances.len()
        )));
    }
    if meas_noise_variances.len() != dims.p {
        return Err(SysIdError::Dimension(format!(
            "measurement noise variance vector must have length {}, got {}",
            dims.p,
            meas_noise_variances.len()
        )));
    }
    if let Some(pv) = process_noise_variances {
        if pv.len() != dims.state_dim() {
            return Err(SysIdError::Dimension(format!(
                "process noise variance vector must have length {}, got {}",
                dims.state_dim(),
                pv.len()
            )));
        }
        if pv.iter().any(|v| *v < 0.0) {
            return Err(SysIdError::InvalidParameter(
                "variances must be nonnegative".into(),
            ));
        }
    }
    if input_variances.iter().any(|v| *v < 0.0) || meas_noise_variances.iter().any(|v| *v < 0.0) {
        return Err(SysIdError::InvalidParameter(
            "variances must be nonnegative".into(),
        ));
    }
    Ok(())
}

/// Simulates `n_steps` samples with Gaussian inputs and measurement noise
/// (plus optional process noise). Deterministic for a fixed seed.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    sys: &BrunovskySystem,
    n_steps: usize,
    input_variances: &DVector<f64>,
    meas_noise_variances: &DVector<f64>,
    process_noise_variances: Option<&DVector<f64>>,
    h0: DVector<f64>,
    seed: u64,
) -> Result<Trajectory> {
    if n_steps < 1 {
        return Err(SysIdError::Precondition("n_steps must be >= 1".into()));
    }
    let initial_state = h0.clone();
    let mut stream = TrajectoryStream::new(
        sys,
        input_variances,
        meas_noise_variances,
        process_noise_variances,
        h0,
        seed,
    )?;
    let mut inputs = Vec::with_capacity(n_steps);
    let mut outputs = Vec::with_capacity(n_steps);
    let mut hidden = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        // The stream advances its state after emitting, so grab h before.
        hidden.push(stream.state.clone());
        let (u, y) = stream.next().expect("stream is infinite");
        inputs.push(u);
        outputs.push(y);
    }
    Ok(Trajectory {
        inputs,
        outputs,
        hidden_states: Some(hidden),
        input_variances: input_variances.clone(),
        meas_noise_variances: meas_noise_variances.clone(),
        initial_state,
    })
}

/// Noise-free forced response to a given input sequence. The impulse-response
/// oracle for the Markov parameters.
pub fn respond(
    sys: &BrunovskySystem,
    inputs: &[DVector<f64>],
    h0: DVector<f64>,
) -> Result<Trajectory> {
    let dims = sys.dims();
    if h0.len() != dims.state_dim() {
        return Err(SysIdError::Dimension("h0 length mismatch".into()));
    }
    if inputs.iter().any(|u| u.len() != dims.m) {
        return Err(SysIdError::Dimension("input width mismatch".into()));
    }
    let (a, b) = assemble_state_matrices(sys);
    let mut state = h0.clone();
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut hidden = Vec::with_capacity(inputs.len());
    for u in inputs {
        hidden.push(state.clone());
        outputs.push(sys.c_matrix() * &state + sys.d_matrix() * u);
        state = &a * &state + &b * u;
    }
    Ok(Trajectory {
        inputs: inputs.to_vec(),
        outputs,
        hidden_states: Some(hidden),
        input_variances: DVector::zeros(dims.m),
        meas_noise_variances: DVector::zeros(dims.p),
        initial_state: h0,
    })
}

/// The first `T` Markov parameters `[D, CB, CAB, ..., C A^(T-2) B]` laid out
/// as `T` contiguous `p x m` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovMatrix {
    blocks: DMatrix<f64>,
    truncation: usize,
}

impl MarkovMatrix {
    pub fn new(blocks: DMatrix<f64>, truncation: usize) -> Result<Self> {
        if truncation < 2 {
            return Err(SysIdError::Precondition(format!(
                "truncation must be >= 2, got {truncation}"
            )));
        }
        if blocks.ncols() % truncation != 0 {
            return Err(SysIdError::Dimension(format!(
                "{} columns not divisible into {truncation} blocks",
                blocks.ncols()
            )));
        }
        Ok(Self { blocks, truncation })
    }

    pub fn zeros(p: usize, m: usize, truncation: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(p, m * truncation), truncation)
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn output_dim(&self) -> usize {
        self.blocks.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.blocks.ncols() / self.truncation
    }

    /// The full `p x (m T)` matrix.
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.blocks
    }

    pub fn as_matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.blocks
    }

    /// Block `k`: `D` for `k = 0`, `C A^(k-1) B` for `k >= 1`.
    pub fn block(&self, k: usize) -> DMatrix<f64> {
        let m = self.input_dim();
        self.blocks
            .view((0, k * m), (self.blocks.nrows(), m))
            .into()
    }

    pub fn to_json(&self) -> String {
        let j = MarkovJson {
            p: self.output_dim(),
            m: self.input_dim(),
            t: self.truncation,
            blocks: row_major(&self.blocks),
        };
        serde_json::to_string_pretty(&j).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: MarkovJson = serde_json::from_str(text)?;
        if j.blocks.len() != j.p * j.m * j.t {
            return Err(SysIdError::Dimension(
                "markov payload length does not match p * m * T".into(),
            ));
        }
        Self::new(DMatrix::from_row_slice(j.p, j.m * j.t, &j.blocks), j.t)
    }
}

#[derive(Serialize, Deserialize)]
struct MarkovJson {
    p: usize,
    m: usize,
    t: usize,
    blocks: Vec<f64>,
}

/// Ground-truth truncated Markov matrix, by iterated multiply (never explicit
/// matrix powers).
pub fn true_markov(sys: &BrunovskySystem, truncation: usize) -> Result<MarkovMatrix> {
    if truncation < 2 {
        return Err(SysIdError::Precondition(format!(
            "truncation must be >= 2, got {truncation}"
        )));
    }
    let dims = sys.dims();
    let (a, b) = assemble_state_matrices(sys);
    let mut blocks = DMatrix::zeros(dims.p, dims.m * truncation);
    blocks
        .view_mut((0, 0), (dims.p, dims.m))
        .copy_from(sys.d_matrix());
    let mut power = b; // A^(k-1) B, updated in place
    for k in 1..truncation {
        let blk = sys.c_matrix() * &power;
        blocks
            .view_mut((0, k * dims.m), (dims.p, dims.m))
            .copy_from(&blk);
        power = &a * power;
    }
    MarkovMatrix::new(blocks, truncation)
}

/// Exact transfer function `G(z) = C (zI - A)^{-1} B + D` by complex linear
/// solve. Errors when `z` is (numerically) an eigenvalue of `A`.
pub fn transfer_function(sys: &BrunovskySystem, z: C64) -> Result<DMatrix<C64>> {
    let dims = sys.dims();
    let tol = 1e-9 * z.norm().max(1.0);
    if sys.roots().iter().any(|lam| (z - lam).norm() < tol) {
        return Err(SysIdError::Singular(format!(
            "z = {z} is within {tol:.1e} of an eigenvalue of A"
        )));
    }
    let (a, b) = assemble_state_matrices(sys);
    let nm = dims.state_dim();
    let mut resolvent = DMatrix::from_fn(nm, nm, |r, c| -C64::new(a[(r, c)], 0.0));
    for i in 0..nm {
        resolvent[(i, i)] += z;
    }
    let b_c = b.map(|v| C64::new(v, 0.0));
    let x = resolvent
        .lu()
        .solve(&b_c)
        .ok_or_else(|| SysIdError::Singular(format!("zI - A singular at z = {z}")))?;
    let c_c = sys.c_matrix().map(|v| C64::new(v, 0.0));
    let d_c = sys.d_matrix().map(|v| C64::new(v, 0.0));
    Ok(c_c * x + d_c)
}
