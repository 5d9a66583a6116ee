//! Finite Markov abstractions of reduced-order models.
//!
//! The abstraction lives on a uniform grid over a bounded region of the
//! reduced state space plus one absorbing sink for everything outside.
//! Transition probabilities are Gaussian cell masses around the one-step
//! mean, so the kernel is exact for the grid geometry rather than sampled.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::grid::{GridPartition, InputGrid};
use crate::special::normal_cdf;

/// Reduced-order dynamics x̂(k+1) = Â x̂(k) + B̂ û(k) + Ê·exp(F̂ x̂(k)) + R̂ ς(k)
/// with output ŷ(k) = Ĉ x̂(k).
///
/// The reduction itself (balanced truncation or otherwise) happens upstream;
/// this type carries its result. For systems abstracted at full order the
/// fields simply repeat the plant matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub e: DVector<f64>,
    pub f: RowDVector<f64>,
    pub r: DMatrix<f64>,
}

impl ReducedModel {
    /// Checks internal dimension consistency. `location` prefixes error
    /// locations, e.g. `abstraction.reduced`.
    pub fn validate(&self, location: &str) -> Result<()> {
        let n = self.a.nrows();
        let field = |f: &str| format!("{location}.{f}");
        if self.a.ncols() != n {
            return Err(Error::dimension(field("A"), "state matrix must be square"));
        }
        if self.b.nrows() != n {
            return Err(Error::dimension(field("B"), "row count must match state dimension"));
        }
        if self.c.ncols() != n {
            return Err(Error::dimension(field("C"), "column count must match state dimension"));
        }
        if self.e.nrows() != n {
            return Err(Error::dimension(field("E"), "row count must match state dimension"));
        }
        if self.f.ncols() != n {
            return Err(Error::dimension(field("F"), "column count must match state dimension"));
        }
        if self.r.nrows() != n {
            return Err(Error::dimension(field("R"), "row count must match state dimension"));
        }
        for (name, m) in [("A", &self.a), ("B", &self.b), ("C", &self.c), ("R", &self.r)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(field(name), "entries must be finite"));
            }
        }
        if self.e.iter().chain(self.f.iter()).any(|v| !v.is_finite()) {
            return Err(Error::validation(field("E"), "entries must be finite"));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Mean of the one-step successor distribution.
    pub fn step_mean(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut next = &self.a * x + &self.b * u;
        let arg = (&self.f * x)[0];
        next.axpy(arg.exp(), &self.e, 1.0);
        next
    }

    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }

    /// Per-coordinate noise standard deviations.
    ///
    /// The cell-mass construction factors the Gaussian across dimensions, so
    /// R̂ must be square diagonal with positive entries; anything else is a
    /// configuration error, not a numeric edge case.
    pub fn noise_sigmas(&self, location: &str) -> Result<Vec<f64>> {
        let n = self.state_dim();
        if self.r.ncols() != n {
            return Err(Error::validation(
                format!("{location}.R"),
                "noise matrix must be square for the cell-mass kernel",
            ));
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && self.r[(i, j)] != 0.0 {
                    return Err(Error::validation(
                        format!("{location}.R"),
                        "noise matrix must be diagonal for the cell-mass kernel",
                    ));
                }
            }
        }
        let sigmas: Vec<f64> = (0..n).map(|i| self.r[(i, i)].abs()).collect();
        if sigmas.iter().any(|&s| s <= 0.0) {
            return Err(Error::validation(
                format!("{location}.R"),
                "noise matrix needs a positive diagonal; a noiseless abstraction has no kernel",
            ));
        }
        Ok(sigmas)
    }
}

/// One row of the transition kernel: the successor distribution of a single
/// (cell, input) pair. Grid cells with exactly zero mass are not stored.
///
/// Invariant: `cols` strictly increasing, `vals` positive, and
/// `vals.sum() + sink` equals 1 within 1e-9.
#[derive(Debug, Clone, Default)]
pub struct KernelRow {
    pub cols: Vec<u32>,
    pub vals: Vec<f64>,
    /// Mass landing outside the grid.
    pub sink: f64,
}

impl KernelRow {
    pub fn absorbing_sink() -> Self {
        KernelRow { cols: Vec::new(), vals: Vec::new(), sink: 1.0 }
    }

    /// Iterates stored (cell index, probability) pairs; sink mass excluded.
    pub fn cells(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.cols.iter().zip(&self.vals).map(|(&c, &v)| (c as usize, v))
    }

    /// Total mass including the sink, compensated summation.
    pub fn total(&self) -> f64 {
        let mut sum = self.sink;
        let mut comp = 0.0;
        for &v in &self.vals {
            let y = v - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        sum
    }

    /// Probability of a specific grid cell (not the sink).
    pub fn mass_at(&self, cell: usize) -> f64 {
        match self.cols.binary_search(&(cell as u32)) {
            Ok(i) => self.vals[i],
            Err(_) => 0.0,
        }
    }

    fn bytes(&self) -> u64 {
        (self.cols.len() * 4 + self.vals.len() * 8 + std::mem::size_of::<KernelRow>()) as u64
    }
}

/// Dense-kernel size in bytes for a square dense layout, the figure quoted
/// when reporting abstraction cost. The in-memory kernel skips zero entries
/// and is usually far smaller; see [`FiniteAbstraction::kernel_bytes`].
pub fn memory_estimate(nstates: usize, ninputs: usize) -> u128 {
    nstates as u128 * nstates as u128 * ninputs as u128 * 8
}

/// A finite Markov abstraction: grid + input set + transition kernel.
#[derive(Debug, Clone)]
pub struct FiniteAbstraction {
    pub reduced: ReducedModel,
    /// Lifts abstract states into the concrete state space (x ≈ P x̂).
    pub p: DMatrix<f64>,
    pub grid: GridPartition,
    pub inputs: InputGrid,
    /// Indices into `inputs` admissible for synthesis (the restricted set Û′).
    pub uprime: Vec<usize>,
    /// Cell rows, one block per input: `rows[input * ncells + cell]`.
    rows: Vec<KernelRow>,
    sink_row: KernelRow,
}

impl FiniteAbstraction {
    /// Builds the full kernel. `cap_bytes` bounds the actual bytes held by
    /// the sparse rows; exceeding it aborts the build before allocation runs
    /// away on fine grids.
    pub fn build(
        reduced: ReducedModel,
        p: DMatrix<f64>,
        grid: GridPartition,
        inputs: InputGrid,
        uprime: Vec<usize>,
        cap_bytes: u64,
    ) -> Result<Self> {
        reduced.validate("abstraction.reduced")?;
        let n = reduced.state_dim();
        if grid.dim() != n {
            return Err(Error::dimension(
                "abstraction.state_grid",
                "grid dimension must match the reduced state dimension",
            ));
        }
        if inputs.dim() != reduced.input_dim() {
            return Err(Error::dimension(
                "abstraction.input_grid",
                "input grid dimension must match the reduced input dimension",
            ));
        }
        if p.ncols() != n {
            return Err(Error::dimension(
                "abstraction.P",
                "reduction matrix must have one column per reduced state",
            ));
        }
        if uprime.is_empty() || uprime.iter().any(|&i| i >= inputs.len()) {
            return Err(Error::validation(
                "abstraction.uprime",
                "restricted input set must be a nonempty subset of the input grid",
            ));
        }
        let sigmas = reduced.noise_sigmas("abstraction.reduced")?;

        let ncells = grid.ncells();
        let mut rows = Vec::with_capacity(ncells * inputs.len());
        let mut bytes = 0u64;
        for ui in 0..inputs.len() {
            let u = DVector::from_vec(inputs.center(ui));
            for cell in 0..ncells {
                let x = DVector::from_vec(grid.center(cell));
                let mu = reduced.step_mean(&x, &u);
                let row = gaussian_row(&grid, mu.as_slice(), &sigmas);
                bytes += row.bytes();
                if bytes > cap_bytes {
                    return Err(Error::MemoryCap { requested: bytes, cap: cap_bytes });
                }
                rows.push(row);
            }
        }
        Ok(FiniteAbstraction {
            reduced,
            p,
            grid,
            inputs,
            uprime,
            rows,
            sink_row: KernelRow::absorbing_sink(),
        })
    }

    pub fn nstates(&self) -> usize {
        self.grid.nstates()
    }

    pub fn ninputs(&self) -> usize {
        self.inputs.len()
    }

    /// Successor distribution of a state (grid cell or sink) under an input.
    pub fn kernel_row(&self, state: usize, input: usize) -> &KernelRow {
        assert!(state < self.grid.nstates() && input < self.inputs.len());
        if state == self.grid.sink() {
            &self.sink_row
        } else {
            &self.rows[input * self.grid.ncells() + state]
        }
    }

    /// Actual bytes held by the sparse kernel rows.
    pub fn kernel_bytes(&self) -> u64 {
        self.rows.iter().map(KernelRow::bytes).sum()
    }

    /// Abstract output ĥ(x̂) of a grid state; the sink has no output.
    pub fn output_of(&self, state: usize) -> Option<DVector<f64>> {
        if state == self.grid.sink() {
            None
        } else {
            Some(self.reduced.output(&DVector::from_vec(self.grid.center(state))))
        }
    }

    /// Serializes the kernel with a header binding it to a scenario hash.
    pub fn write_cache(&self, path: &std::path::Path, scenario_hash: u64) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&scenario_hash.to_le_bytes())?;
        w.write_all(&(self.grid.ncells() as u64).to_le_bytes())?;
        w.write_all(&(self.inputs.len() as u64).to_le_bytes())?;
        for row in &self.rows {
            w.write_all(&(row.cols.len() as u32).to_le_bytes())?;
            for &c in &row.cols {
                w.write_all(&c.to_le_bytes())?;
            }
            for &v in &row.vals {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&row.sink.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rebuilds an abstraction from a cache written by [`write_cache`],
    /// refusing files whose header hash disagrees with `scenario_hash`.
    ///
    /// [`write_cache`]: FiniteAbstraction::write_cache
    pub fn read_cache(
        path: &std::path::Path,
        scenario_hash: u64,
        reduced: ReducedModel,
        p: DMatrix<f64>,
        grid: GridPartition,
        inputs: InputGrid,
        uprime: Vec<usize>,
    ) -> Result<Self> {
        use std::io::Read;
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if magic != *CACHE_MAGIC {
            return Err(Error::CacheMismatch(format!("{} is not a kernel cache", path.display())));
        }
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let hash = u64::from_le_bytes(buf8);
        if hash != scenario_hash {
            return Err(Error::CacheMismatch(format!(
                "cache was built for scenario hash {hash:016x}, expected {scenario_hash:016x}"
            )));
        }
        r.read_exact(&mut buf8)?;
        let ncells = u64::from_le_bytes(buf8) as usize;
        r.read_exact(&mut buf8)?;
        let ninputs = u64::from_le_bytes(buf8) as usize;
        if ncells != grid.ncells() || ninputs != inputs.len() {
            return Err(Error::CacheMismatch(format!(
                "cache holds {ncells} cells x {ninputs} inputs, scenario wants {} x {}",
                grid.ncells(),
                inputs.len()
            )));
        }
        let mut rows = Vec::with_capacity(ncells * ninputs);
        let mut buf4 = [0u8; 4];
        for _ in 0..ncells * ninputs {
            r.read_exact(&mut buf4)?;
            let len = u32::from_le_bytes(buf4) as usize;
            let mut cols = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut buf4)?;
                cols.push(u32::from_le_bytes(buf4));
            }
            let mut vals = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut buf8)?;
                vals.push(f64::from_le_bytes(buf8));
            }
            r.read_exact(&mut buf8)?;
            let sink = f64::from_le_bytes(buf8);
            rows.push(KernelRow { cols, vals, sink });
        }
        Ok(FiniteAbstraction {
            reduced,
            p,
            grid,
            inputs,
            uprime,
            rows,
            sink_row: KernelRow::absorbing_sink(),
        })
    }
}

const CACHE_MAGIC: &[u8; 8] = b"WARDKER1";

/// Gaussian mass of every grid cell around mean `mu`, factored per dimension.
///
/// Cell masses are products of per-dimension CDF differences; zero-mass cells
/// (the Gaussian underflows past roughly 38 sigma) are skipped entirely,
/// which keeps fine grids sparse. Sink mass is one minus the compensated sum.
fn gaussian_row(grid: &GridPartition, mu: &[f64], sigmas: &[f64]) -> KernelRow {
    let dim = grid.dim();
    let mut spans: Vec<(usize, Vec<f64>)> = Vec::with_capacity(dim);
    for d in 0..dim {
        spans.push(dim_masses(grid, d, mu[d], sigmas[d]));
        if spans[d].1.is_empty() {
            // No in-grid mass along this dimension: everything is sink.
            return KernelRow::absorbing_sink();
        }
    }

    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut sum = 0.0;
    let mut comp = 0.0;
    // Odometer over the nonzero range of every dimension.
    let mut offsets = vec![0usize; dim];
    'outer: loop {
        let mut mass = 1.0;
        let mut coords = vec![0usize; dim];
        for d in 0..dim {
            let (start, ms) = &spans[d];
            mass *= ms[offsets[d]];
            coords[d] = start + offsets[d];
        }
        if mass > 0.0 {
            cols.push(grid.index_of(&coords) as u32);
            vals.push(mass);
            let y = mass - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        for d in (0..dim).rev() {
            offsets[d] += 1;
            if offsets[d] < spans[d].1.len() {
                continue 'outer;
            }
            offsets[d] = 0;
            if d == 0 {
                break 'outer;
            }
        }
    }

    // Row-major index_of over increasing odometer coordinates yields
    // increasing indices, so `cols` is already sorted.
    let sink = (1.0 - sum).max(0.0);
    KernelRow { cols, vals, sink }
}

/// Nonzero run of per-cell interval masses along one dimension: returns the
/// first cell index with positive mass and the masses from there on.
fn dim_masses(grid: &GridPartition, d: usize, mu: f64, sigma: f64) -> (usize, Vec<f64>) {
    let count = grid.counts[d];
    let lo = grid.lo[d];
    let w = grid.width(d);
    let mut cdf = Vec::with_capacity(count + 1);
    for j in 0..=count {
        let edge = lo + j as f64 * w;
        cdf.push(normal_cdf((edge - mu) / sigma));
    }
    let mut masses: Vec<f64> = (0..count).map(|j| (cdf[j + 1] - cdf[j]).max(0.0)).collect();
    let start = masses.iter().position(|&m| m > 0.0).unwrap_or(masses.len());
    masses.drain(..start);
    if let Some(end) = masses.iter().rposition(|&m| m > 0.0) {
        masses.truncate(end + 1);
    } else {
        masses.clear();
    }
    (start, masses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridPartition, InputGrid};
    use approx::assert_abs_diff_eq;

    fn two_car_reduced() -> ReducedModel {
        ReducedModel {
            a: DMatrix::from_element(1, 1, 1.0),
            b: DMatrix::from_element(1, 1, 0.3469),
            c: DMatrix::from_element(1, 1, 1.0),
            e: DVector::zeros(1),
            f: RowDVector::zeros(1),
            r: DMatrix::from_element(1, 1, 0.0159),
        }
    }

    fn two_car_abstraction() -> FiniteAbstraction {
        FiniteAbstraction::build(
            two_car_reduced(),
            DMatrix::from_column_slice(3, 1, &[1.0, 0.76, 0.0]),
            GridPartition::new(vec![0.0], vec![10.0], vec![100], "test").unwrap(),
            InputGrid::new(vec![-0.3], vec![0.3], vec![20], "test").unwrap(),
            (0..20).collect(),
            u64::MAX,
        )
        .unwrap()
    }

    fn motor_reduced() -> ReducedModel {
        ReducedModel {
            a: DMatrix::from_row_slice(2, 2, &[0.6387, 0.0080, -0.1606, -0.0020]),
            b: DMatrix::from_column_slice(2, 1, &[0.3996, 0.4011]),
            c: DMatrix::identity(2, 2),
            e: DVector::from_column_slice(&[-0.2, 0.0]),
            f: RowDVector::from_row_slice(&[-0.0796, 0.0]),
            r: DMatrix::from_diagonal_element(2, 2, 0.01),
        }
    }

    fn motor_abstraction(cells_per_dim: usize) -> FiniteAbstraction {
        use std::f64::consts::PI;
        FiniteAbstraction::build(
            motor_reduced(),
            DMatrix::identity(2, 2),
            GridPartition::new(
                vec![1.5 * PI, 0.0],
                vec![2.5 * PI, 2.4],
                vec![cells_per_dim, cells_per_dim],
                "test",
            )
            .unwrap(),
            InputGrid::new(vec![0.0], vec![9.0], vec![40], "test").unwrap(),
            (0..40).collect(),
            u64::MAX,
        )
        .unwrap()
    }

    #[test]
    fn two_car_row_matches_independent_cdf() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let abs = two_car_abstraction();
        // Cell 25 is centered at 2.55, input index 10 at +0.015.
        let row = abs.kernel_row(25, 10);
        let mu = 2.55 + 0.3469 * 0.015;
        let gauss = Normal::new(mu, 0.0159).unwrap();
        for cell in 0..100 {
            let lo = cell as f64 * 0.1;
            let expected = gauss.cdf(lo + 0.1) - gauss.cdf(lo);
            assert_abs_diff_eq!(row.mass_at(cell), expected, epsilon = 1e-11);
        }
        let outside = gauss.cdf(0.0) + (1.0 - gauss.cdf(10.0));
        assert_abs_diff_eq!(row.sink, outside, epsilon = 1e-11);
    }

    #[test]
    fn every_row_sums_to_one() {
        let abs = two_car_abstraction();
        for input in 0..abs.ninputs() {
            for cell in 0..abs.grid.ncells() {
                let total = abs.kernel_row(cell, input).total();
                assert!((total - 1.0).abs() < 1e-9, "row ({cell},{input}) sums to {total}");
            }
        }
        let motor = motor_abstraction(20);
        for input in (0..motor.ninputs()).step_by(7) {
            for cell in 0..motor.grid.ncells() {
                let total = motor.kernel_row(cell, input).total();
                assert!((total - 1.0).abs() < 1e-9, "motor row ({cell},{input}) sums to {total}");
            }
        }
    }

    #[test]
    fn vanishing_noise_concentrates_on_one_cell() {
        let mut reduced = two_car_reduced();
        reduced.r[(0, 0)] = 1e-12;
        let abs = FiniteAbstraction::build(
            reduced,
            DMatrix::from_column_slice(3, 1, &[1.0, 0.76, 0.0]),
            GridPartition::new(vec![0.0], vec![10.0], vec![100], "test").unwrap(),
            InputGrid::new(vec![-0.3], vec![0.3], vec![20], "test").unwrap(),
            (0..20).collect(),
            u64::MAX,
        )
        .unwrap();
        // mu = 2.55 + 0.3469*0.015 lies inside cell 25.
        let row = abs.kernel_row(25, 10);
        assert_eq!(row.cols.len(), 1);
        assert_eq!(row.cols[0], 25);
        assert_abs_diff_eq!(row.vals[0], 1.0, epsilon = 1e-15);
        assert_eq!(row.sink, 0.0);
    }

    #[test]
    fn sink_row_is_absorbing() {
        let abs = two_car_abstraction();
        let row = abs.kernel_row(abs.grid.sink(), 3);
        assert!(row.cols.is_empty());
        assert_eq!(row.sink, 1.0);
    }

    #[test]
    fn mass_near_boundary_flows_to_sink() {
        let abs = two_car_abstraction();
        // Cell 0 is centered at 0.05; the strongest braking input pushes the
        // mean to 0.05 - 0.3469*0.285 < 0, outside the grid.
        let row = abs.kernel_row(0, 0);
        assert!(row.sink > 0.9, "sink mass {} too small near the boundary", row.sink);
        assert!((row.total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn translation_by_one_cell_shifts_the_row() {
        // Binary-exact grid (width 0.25) and means one exact cell apart.
        let reduced = ReducedModel {
            a: DMatrix::from_element(1, 1, 1.0),
            b: DMatrix::from_element(1, 1, 1.0),
            c: DMatrix::from_element(1, 1, 1.0),
            e: DVector::zeros(1),
            f: RowDVector::zeros(1),
            r: DMatrix::from_element(1, 1, 0.1),
        };
        let grid = GridPartition::new(vec![0.0], vec![8.0], vec![32], "test").unwrap();
        let sigmas = [0.1];
        let row_a = super::gaussian_row(&grid, &[2.0], &sigmas);
        let row_b = super::gaussian_row(&grid, &[2.25], &sigmas);
        let _ = reduced;
        for cell in 4..24 {
            assert_abs_diff_eq!(
                row_a.mass_at(cell),
                row_b.mass_at(cell + 1),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn refining_the_grid_preserves_cell_mass() {
        let coarse = GridPartition::new(vec![0.0], vec![10.0], vec![100], "test").unwrap();
        let fine = GridPartition::new(vec![0.0], vec![10.0], vec![200], "test").unwrap();
        let sigmas = [0.0159];
        let mu = [2.55];
        let row_c = super::gaussian_row(&coarse, &mu, &sigmas);
        let row_f = super::gaussian_row(&fine, &mu, &sigmas);
        for cell in 0..100 {
            let children = row_f.mass_at(2 * cell) + row_f.mass_at(2 * cell + 1);
            assert_abs_diff_eq!(row_c.mass_at(cell), children, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(row_c.sink, row_f.sink, epsilon = 1e-12);
    }

    #[test]
    fn memory_estimate_matches_reported_costs() {
        // 101 states, 20 inputs: reported as 1.55e-3 GB.
        let small = memory_estimate(101, 20) as f64 / 1e9;
        assert!((small / 1.55e-3 - 1.0).abs() < 0.10, "got {small} GB");
        // A full-order 3-D abstraction at 1e6 states: reported 1.49e5 GB.
        let large = memory_estimate(1_000_000, 20) as f64 / 1e9;
        assert!((large / 1.49e5 - 1.0).abs() < 0.10, "got {large} GB");
        assert_eq!(memory_estimate(1, 1), 8);
    }

    #[test]
    fn memory_cap_aborts_build() {
        let err = FiniteAbstraction::build(
            two_car_reduced(),
            DMatrix::from_column_slice(3, 1, &[1.0, 0.76, 0.0]),
            GridPartition::new(vec![0.0], vec![10.0], vec![100], "test").unwrap(),
            InputGrid::new(vec![-0.3], vec![0.3], vec![20], "test").unwrap(),
            (0..20).collect(),
            4096,
        )
        .unwrap_err();
        assert!(matches!(err, Error::MemoryCap { .. }));
    }

    #[test]
    fn non_diagonal_noise_is_rejected() {
        let mut reduced = motor_reduced();
        reduced.r[(0, 1)] = 0.003;
        let err = reduced.noise_sigmas("abstraction.reduced").unwrap_err();
        assert!(err.to_string().contains("abstraction.reduced.R"));
    }

    #[test]
    fn cache_roundtrip_and_hash_guard() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kernel.bin");
        let abs = two_car_abstraction();
        abs.write_cache(&path, 0xfeed).unwrap();

        let reloaded = FiniteAbstraction::read_cache(
            &path,
            0xfeed,
            two_car_reduced(),
            DMatrix::from_column_slice(3, 1, &[1.0, 0.76, 0.0]),
            GridPartition::new(vec![0.0], vec![10.0], vec![100], "test").unwrap(),
            InputGrid::new(vec![-0.3], vec![0.3], vec![20], "test").unwrap(),
            (0..20).collect(),
        )
        .unwrap();
        for input in 0..20 {
            for cell in 0..100 {
                let a = abs.kernel_row(cell, input);
                let b = reloaded.kernel_row(cell, input);
                assert_eq!(a.cols, b.cols);
                assert_eq!(a.vals, b.vals);
                assert_eq!(a.sink, b.sink);
            }
        }

        let err = FiniteAbstraction::read_cache(
            &path,
            0xbeef,
            two_car_reduced(),
            DMatrix::from_column_slice(3, 1, &[1.0, 0.76, 0.0]),
            GridPartition::new(vec![0.0], vec![10.0], vec![100], "test").unwrap(),
            InputGrid::new(vec![-0.3], vec![0.3], vec![20], "test").unwrap(),
            (0..20).collect(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::CacheMismatch(_)));
    }

    #[test]
    fn kernel_bytes_stay_far_below_dense_estimate() {
        let motor = motor_abstraction(40);
        let dense = memory_estimate(motor.nstates(), motor.ninputs());
        let actual = motor.kernel_bytes() as u128;
        assert!(actual * 10 < dense, "sparse {actual} vs dense {dense}");
    }
}
