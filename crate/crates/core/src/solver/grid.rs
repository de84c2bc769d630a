use crate::error::{Error, Result};
use crate::schedule::FloorMatrix;

/// Optimal success probabilities `v_i(x, a)` on the wealth grids
/// `D_{a,i} = { j * m_{a,i} / M : j = 1..M-1 }`.
///
/// Stage `k` is never stored; it is the step function `1{x >= 0}`.
#[derive(Debug, Clone)]
pub struct ValueGrid {
    resolution: usize,
    floors: FloorMatrix,
    values: Vec<f64>,
    // running maximum of `values` along the wealth axis
    envelope: Vec<f64>,
}

/// Stock weight `q*_i(x, a)` chosen at every grid point of every stage
/// `0..k-1`.
#[derive(Debug, Clone)]
pub struct PolicyGrid {
    resolution: usize,
    floors: FloorMatrix,
    weights: Vec<f64>,
}

#[inline]
pub(crate) fn grid_point(floor: f64, resolution: usize, j: usize) -> f64 {
    j as f64 * floor / resolution as f64
}

/// Largest `j` in `0..resolution` with `grid_point(j) <= x`, for `0 <= x < floor`.
fn cell_index(x: f64, floor: f64, resolution: usize) -> usize {
    let mut j = ((x / floor) * resolution as f64).floor() as isize;
    j = j.clamp(0, resolution as isize - 1);
    let mut j = j as usize;
    while j + 1 < resolution && grid_point(floor, resolution, j + 1) <= x {
        j += 1;
    }
    while j > 0 && grid_point(floor, resolution, j) > x {
        j -= 1;
    }
    j
}

fn offset(floors: &FloorMatrix, resolution: usize, stage: usize, pool: u32) -> usize {
    let per_pool = resolution - 1;
    let per_stage = per_pool * (floors.max_pool() as usize + 1);
    stage * per_stage + pool as usize * per_pool
}

impl ValueGrid {
    pub(crate) fn new(floors: FloorMatrix, resolution: usize) -> Result<Self> {
        let cells = (resolution - 1) * (floors.max_pool() as usize + 1) * floors.horizon();
        let mut values = Vec::new();
        let mut envelope = Vec::new();
        values
            .try_reserve_exact(cells)
            .and_then(|_| envelope.try_reserve_exact(cells))
            .map_err(|_| Error::Resource { stage: floors.horizon(), pool: floors.max_pool() })?;
        values.resize(cells, 0.0);
        envelope.resize(cells, 0.0);
        Ok(Self { resolution, floors, values, envelope })
    }

    pub(crate) fn from_values(floors: FloorMatrix, resolution: usize, values: Vec<f64>) -> Self {
        let mut grid = Self { resolution, floors, envelope: values.clone(), values };
        for stage in 0..grid.horizon() {
            for pool in 0..=grid.max_pool() {
                grid.refresh_envelope(stage, pool);
            }
        }
        grid
    }

    pub(crate) fn store(&mut self, stage: usize, pool: u32, column: &[f64]) {
        let o = offset(&self.floors, self.resolution, stage, pool);
        self.values[o..o + self.resolution - 1].copy_from_slice(column);
        self.refresh_envelope(stage, pool);
    }

    fn refresh_envelope(&mut self, stage: usize, pool: u32) {
        let o = offset(&self.floors, self.resolution, stage, pool);
        let mut running = 0.0f64;
        for idx in o..o + self.resolution - 1 {
            running = running.max(self.values[idx]);
            self.envelope[idx] = running;
        }
    }

    /// Grid resolution `M`.
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn horizon(&self) -> usize {
        self.floors.horizon()
    }

    pub fn max_pool(&self) -> u32 {
        self.floors.max_pool()
    }

    pub fn floors(&self) -> &FloorMatrix {
        &self.floors
    }

    /// Wealth of grid point `j` for pool size `a` at stage `i`.
    pub fn wealth(&self, stage: usize, pool: u32, j: usize) -> f64 {
        grid_point(self.floors.floor(pool, stage), self.resolution, j)
    }

    /// Stored values for `j = 1..M-1` (index `j - 1`).
    pub fn column(&self, stage: usize, pool: u32) -> &[f64] {
        assert!(stage < self.horizon());
        let o = offset(&self.floors, self.resolution, stage, pool);
        &self.values[o..o + self.resolution - 1]
    }

    pub fn stored(&self, stage: usize, pool: u32, j: usize) -> f64 {
        assert!((1..self.resolution).contains(&j));
        self.column(stage, pool)[j - 1]
    }

    /// `v_i(x, a)` with the grid's extension rules: exactly 1 on and above
    /// the floor, 0 below the first grid point, and otherwise the largest
    /// stored value at a grid point `<= x`. Between grid points this is a
    /// lower bound of the underlying value function.
    pub fn value_at(&self, wealth: f64, pool: u32, stage: usize) -> f64 {
        let horizon = self.horizon();
        assert!(stage <= horizon, "stage {stage} beyond horizon {horizon}");
        if wealth < 0.0 {
            return 0.0;
        }
        if stage == horizon || pool == 0 {
            return 1.0;
        }
        let floor = self.floors.floor(pool, stage);
        if wealth >= floor {
            return 1.0;
        }
        let j = cell_index(wealth, floor, self.resolution);
        if j == 0 {
            return 0.0;
        }
        let o = offset(&self.floors, self.resolution, stage, pool);
        self.envelope[o + j - 1]
    }
}

impl PolicyGrid {
    pub(crate) fn new(floors: FloorMatrix, resolution: usize) -> Result<Self> {
        let cells = (resolution - 1) * (floors.max_pool() as usize + 1) * floors.horizon();
        let mut weights = Vec::new();
        weights
            .try_reserve_exact(cells)
            .map_err(|_| Error::Resource { stage: floors.horizon(), pool: floors.max_pool() })?;
        weights.resize(cells, 0.0);
        Ok(Self { resolution, floors, weights })
    }

    pub(crate) fn from_weights(floors: FloorMatrix, resolution: usize, weights: Vec<f64>) -> Self {
        Self { resolution, floors, weights }
    }

    pub(crate) fn store(&mut self, stage: usize, pool: u32, column: &[f64]) {
        let o = offset(&self.floors, self.resolution, stage, pool);
        self.weights[o..o + self.resolution - 1].copy_from_slice(column);
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn horizon(&self) -> usize {
        self.floors.horizon()
    }

    pub fn max_pool(&self) -> u32 {
        self.floors.max_pool()
    }

    pub fn floors(&self) -> &FloorMatrix {
        &self.floors
    }

    pub fn column(&self, stage: usize, pool: u32) -> &[f64] {
        assert!(stage < self.horizon());
        let o = offset(&self.floors, self.resolution, stage, pool);
        &self.weights[o..o + self.resolution - 1]
    }

    pub fn stored(&self, stage: usize, pool: u32, j: usize) -> f64 {
        assert!((1..self.resolution).contains(&j));
        self.column(stage, pool)[j - 1]
    }

    /// Stock weight at arbitrary wealth: 1 for `x <= 0`, 0 for `x >= m_{a,i}`,
    /// and linear interpolation between neighbouring grid points otherwise,
    /// anchored at `q(0) = 1` and `q(m_{a,i}) = 0`.
    pub fn weight(&self, wealth: f64, pool: u32, stage: usize) -> Result<f64> {
        if stage >= self.horizon() || pool > self.max_pool() || wealth.is_nan() {
            return Err(Error::PolicyUndefined { stage, wealth, pool });
        }
        if pool == 0 {
            return Ok(0.0);
        }
        if wealth <= 0.0 {
            return Ok(1.0);
        }
        let floor = self.floors.floor(pool, stage);
        if wealth >= floor {
            return Ok(0.0);
        }
        let m = self.resolution;
        let column = self.column(stage, pool);
        let node = |j: usize| match j {
            0 => 1.0,
            j if j == m => 0.0,
            j => column[j - 1],
        };
        let j = cell_index(wealth, floor, m);
        let left = grid_point(floor, m, j);
        let frac = (wealth - left) / (floor / m as f64);
        let (q0, q1) = (node(j), node(j + 1));
        Ok((q0 + frac * (q1 - q0)).clamp(0.0, 1.0))
    }
}
