//! Dense statevector simulator.
//!
//! Provides the gate set needed by the variational ansatz (Ry, CZ) and by the
//! linear-combination-of-unitaries program (Pauli strings, ancilla-controlled
//! Pauli strings, state-preparation reflections), plus amplitude loading,
//! inner products and basis-state probabilities.
//!
//! Bit convention: qubit 0 is the least-significant bit of the basis index.
//! When an ancilla register is present it occupies the high-order bits, i.e.
//! basis index = (ancilla_value << system_width) | system_value.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Hard memory guard: dense simulation caps at 2^24 amplitudes (256 MiB).
pub const MAX_QUBITS: usize = 24;

/// Single-qubit Pauli axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    /// 2x2 matrix of this Pauli, for dense cross-checks.
    pub fn matrix(self) -> [[Complex64; 2]; 2] {
        let o = Complex64::new(1.0, 0.0);
        let z = Complex64::new(0.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        match self {
            Pauli::I => [[o, z], [z, o]],
            Pauli::X => [[z, o], [o, z]],
            Pauli::Y => [[z, -i], [i, z]],
            Pauli::Z => [[o, z], [z, -o]],
        }
    }

    fn letter(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// A tensor product of single-qubit Paulis, one per qubit of the register it
/// is applied to. `axes[q]` acts on qubit `q` (the q-th bit of the index).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PauliString {
    axes: Vec<Pauli>,
}

impl PauliString {
    pub fn new(axes: Vec<Pauli>) -> Self {
        Self { axes }
    }

    /// All-identity string on `n` qubits.
    pub fn identity(n: usize) -> Self {
        Self {
            axes: vec![Pauli::I; n],
        }
    }

    pub fn len(&self) -> usize {
        self.axes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axes.is_empty()
    }

    pub fn axes(&self) -> &[Pauli] {
        &self.axes
    }

    /// Number of non-identity factors.
    pub fn weight(&self) -> usize {
        self.axes.iter().filter(|a| **a != Pauli::I).count()
    }

    /// Bit mask of qubits whose basis bit is flipped by this string (X and Y).
    pub fn flip_mask(&self) -> usize {
        let mut m = 0usize;
        for (q, a) in self.axes.iter().enumerate() {
            if matches!(a, Pauli::X | Pauli::Y) {
                m |= 1 << q;
            }
        }
        m
    }

    /// Amplitude factor contributed when mapping source basis state `src`
    /// to `src ^ flip_mask()`.
    pub fn phase_from_source(&self, src: usize) -> Complex64 {
        let mut p = Complex64::new(1.0, 0.0);
        for (q, a) in self.axes.iter().enumerate() {
            let bit = (src >> q) & 1 == 1;
            match a {
                Pauli::Y => {
                    p *= if bit {
                        Complex64::new(0.0, -1.0)
                    } else {
                        Complex64::new(0.0, 1.0)
                    }
                }
                Pauli::Z => {
                    if bit {
                        p = -p;
                    }
                }
                _ => {}
            }
        }
        p
    }

    /// Dense 2^n x 2^n operator, column-major build for test oracles.
    pub fn to_matrix(&self) -> Vec<Vec<Complex64>> {
        let dim = 1usize << self.len();
        let flip = self.flip_mask();
        let mut m = vec![vec![Complex64::new(0.0, 0.0); dim]; dim];
        for src in 0..dim {
            m[src ^ flip][src] = self.phase_from_source(src);
        }
        m
    }

    /// Parse from a letter string like `"ZIXY"`, where index 0 of the text
    /// acts on qubit 0.
    pub fn parse(text: &str) -> Result<Self> {
        let mut axes = Vec::with_capacity(text.len());
        for ch in text.chars() {
            axes.push(match ch {
                'I' => Pauli::I,
                'X' => Pauli::X,
                'Y' => Pauli::Y,
                'Z' => Pauli::Z,
                other => {
                    return Err(Error::Domain(format!(
                        "invalid Pauli letter `{other}` in `{text}`"
                    )))
                }
            });
        }
        Ok(Self { axes })
    }
}

impl std::fmt::Display for PauliString {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for a in &self.axes {
            write!(f, "{}", a.letter())?;
        }
        Ok(())
    }
}

/// Contiguous range of qubits, e.g. the ancilla register.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QubitRange {
    pub start: usize,
    pub len: usize,
}

impl QubitRange {
    pub fn new(start: usize, len: usize) -> Self {
        Self { start, len }
    }

    fn mask(&self) -> usize {
        (((1u64 << self.len) - 1) as usize) << self.start
    }

    fn value_of(&self, index: usize) -> usize {
        (index >> self.start) & (((1u64 << self.len) - 1) as usize)
    }
}

/// Dense quantum register state: 2^n complex amplitudes with unit norm.
#[derive(Debug, Clone)]
pub struct StateVector {
    num_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// All qubits in the ground state |0...0>.
    pub fn zero(num_qubits: usize) -> Result<Self> {
        if num_qubits == 0 || num_qubits > MAX_QUBITS {
            return Err(Error::Domain(format!(
                "qubit count {num_qubits} outside [1, {MAX_QUBITS}]"
            )));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << num_qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(Self { num_qubits, amps })
    }

    /// Load and normalize an amplitude vector. Length must be a power of two.
    pub fn from_amplitudes(v: &[Complex64]) -> Result<Self> {
        if v.is_empty() || !v.len().is_power_of_two() {
            return Err(Error::Dimension(format!(
                "amplitude vector length {} is not a power of two",
                v.len()
            )));
        }
        let norm: f64 = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Domain("cannot load the zero vector".into()));
        }
        let num_qubits = v.len().trailing_zeros() as usize;
        if num_qubits > MAX_QUBITS {
            return Err(Error::Domain(format!(
                "amplitude vector implies {num_qubits} qubits, above the cap"
            )));
        }
        Ok(Self {
            num_qubits,
            amps: v.iter().map(|a| a / norm).collect(),
        })
    }

    /// Load a real vector, normalizing it.
    pub fn from_real(v: &[f64]) -> Result<Self> {
        let cv: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Self::from_amplitudes(&cv)
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.num_qubits {
            return Err(Error::Dimension(format!(
                "qubit {q} out of range for {}-qubit register",
                self.num_qubits
            )));
        }
        Ok(())
    }

    fn check_range(&self, r: QubitRange) -> Result<()> {
        if r.len == 0 || r.start + r.len > self.num_qubits {
            return Err(Error::Dimension(format!(
                "qubit range [{}, {}) invalid for {}-qubit register",
                r.start,
                r.start + r.len,
                self.num_qubits
            )));
        }
        Ok(())
    }

    /// Rotation around the Y axis on one qubit:
    /// [[cos t/2, -sin t/2], [sin t/2, cos t/2]].
    pub fn apply_ry(&mut self, qubit: usize, theta: f64) -> Result<()> {
        self.check_qubit(qubit)?;
        let (s, c) = (theta / 2.0).sin_cos();
        let bit = 1usize << qubit;
        for i in 0..self.amps.len() {
            if i & bit == 0 {
                let j = i | bit;
                let a0 = self.amps[i];
                let a1 = self.amps[j];
                self.amps[i] = c * a0 - s * a1;
                self.amps[j] = s * a0 + c * a1;
            }
        }
        Ok(())
    }

    /// Controlled-Z: negates amplitudes of basis states with both qubits set.
    pub fn apply_cz(&mut self, q1: usize, q2: usize) -> Result<()> {
        self.check_qubit(q1)?;
        self.check_qubit(q2)?;
        if q1 == q2 {
            return Err(Error::Dimension("cz requires distinct qubits".into()));
        }
        let mask = (1usize << q1) | (1usize << q2);
        for (i, a) in self.amps.iter_mut().enumerate() {
            if i & mask == mask {
                *a = -*a;
            }
        }
        Ok(())
    }

    /// Apply a Pauli string on the low `p.len()` qubits, optionally controlled
    /// on an ancilla register holding basis value `l`: the operator acts only
    /// on amplitudes whose ancilla bits equal `l` and is the identity
    /// elsewhere.
    pub fn apply_pauli_string(
        &mut self,
        p: &PauliString,
        controlled_on: Option<(QubitRange, usize)>,
    ) -> Result<()> {
        if let Some((range, l)) = controlled_on {
            self.check_range(range)?;
            if p.len() + range.len > self.num_qubits || p.len() != range.start {
                return Err(Error::Dimension(format!(
                    "pauli string width {} does not match system register below ancilla range",
                    p.len()
                )));
            }
            if l >= (1usize << range.len) {
                return Err(Error::Dimension(format!(
                    "control value {l} out of range for {}-qubit ancilla",
                    range.len
                )));
            }
            self.pauli_kernel(p, Some((range, l)));
        } else {
            if p.len() != self.num_qubits {
                return Err(Error::Dimension(format!(
                    "pauli string width {} != register width {}",
                    p.len(),
                    self.num_qubits
                )));
            }
            self.pauli_kernel(p, None);
        }
        Ok(())
    }

    fn pauli_kernel(&mut self, p: &PauliString, control: Option<(QubitRange, usize)>) {
        let flip = p.flip_mask();
        let selected = |i: usize| match control {
            Some((range, l)) => range.value_of(i) == l,
            None => true,
        };
        if flip == 0 {
            for i in 0..self.amps.len() {
                if selected(i) {
                    self.amps[i] *= p.phase_from_source(i);
                }
            }
            return;
        }
        for i in 0..self.amps.len() {
            let j = i ^ flip;
            if i < j && selected(i) {
                let ai = self.amps[i];
                let aj = self.amps[j];
                self.amps[i] = p.phase_from_source(j) * aj;
                self.amps[j] = p.phase_from_source(i) * ai;
            }
        }
    }

    /// Multiply amplitudes of the branch where `range` holds `value` by a
    /// scalar phase (|phase| = 1 keeps the state normalized). Used to absorb
    /// the sign of a decomposition coefficient into its controlled unitary.
    pub fn apply_phase_on_branch(
        &mut self,
        range: QubitRange,
        value: usize,
        phase: Complex64,
    ) -> Result<()> {
        self.check_range(range)?;
        for (i, a) in self.amps.iter_mut().enumerate() {
            if range.value_of(i) == value {
                *a *= phase;
            }
        }
        Ok(())
    }

    /// Householder reflection I - 2uu† on a sub-register, applied to every
    /// fiber of the remaining qubits. `u` must have length 2^range.len and
    /// unit norm. The reflection is unitary and involutory, so it serves both
    /// as a state-preparation unitary and as its own adjoint.
    pub fn apply_reflection(&mut self, u: &[Complex64], range: QubitRange) -> Result<()> {
        self.check_range(range)?;
        if u.len() != 1usize << range.len {
            return Err(Error::Dimension(format!(
                "reflection vector length {} != 2^{}",
                u.len(),
                range.len
            )));
        }
        let stride = 1usize << range.start;
        let width = u.len();
        let high_groups = self.amps.len() >> (range.start + range.len);
        for hi in 0..high_groups {
            let hi_base = hi << (range.start + range.len);
            for lo in 0..stride {
                let base = hi_base | lo;
                let mut dot = Complex64::new(0.0, 0.0);
                for k in 0..width {
                    dot += u[k].conj() * self.amps[base + k * stride];
                }
                let two_dot = 2.0 * dot;
                for k in 0..width {
                    self.amps[base + k * stride] -= two_dot * u[k];
                }
            }
        }
        Ok(())
    }

    /// Inner product <self|other>.
    pub fn inner_product(&self, other: &StateVector) -> Result<Complex64> {
        if self.num_qubits != other.num_qubits {
            return Err(Error::Dimension(format!(
                "inner product between {}- and {}-qubit states",
                self.num_qubits, other.num_qubits
            )));
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Probability of measuring every qubit of `range` as 0.
    pub fn ancilla_ground_probability(&self, range: QubitRange) -> Result<f64> {
        self.check_range(range)?;
        let mask = range.mask();
        Ok(self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask == 0)
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }

    /// Extract the (unnormalized) amplitudes of the branch where `range`
    /// holds `value`, ordered by the remaining low-qubit index.
    pub fn branch_amplitudes(&self, range: QubitRange, value: usize) -> Result<Vec<Complex64>> {
        self.check_range(range)?;
        let mut out = Vec::with_capacity(self.amps.len() >> range.len);
        for (i, a) in self.amps.iter().enumerate() {
            if range.value_of(i) == value {
                out.push(*a);
            }
        }
        Ok(out)
    }
}

/// Unit reflection vector `u` such that (I - 2uu†)|0> = |target>, for a real
/// nonnegative-first-component unit `target`. Returns `None` when the target
/// is |0> itself (the preparation is the identity).
pub fn householder_vector(target: &[f64]) -> Option<Vec<Complex64>> {
    let mut v: Vec<f64> = target.to_vec();
    v[0] -= 1.0;
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-14 {
        return None;
    }
    Some(
        v.into_iter()
            .map(|x| Complex64::new(x / norm, 0.0))
            .collect(),
    )
}
