//! Network geometry and channel generation for both system layouts.
//!
//! One scenario is a single drop of AP, base-station and user positions over
//! a shared square area. A channel realization adds large-scale coefficients
//! (three-slope path loss, log-normal shadowing above the outer breakpoint)
//! and i.i.d. unit-variance complex Gaussian small-scale fading for one
//! coherence interval.
//!
//! All randomness flows through an explicit RNG so that a fixed seed
//! reproduces every output bit-for-bit.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from configuration validation and channel-model domain checks.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario configuration: {0}")]
    InvalidConfig(String),
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
}

/// A point in the 2-D coverage area, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn distance_to(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// How the `L` cells tile the square area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellLayout {
    /// sqrt(L) x sqrt(L) grid of square cells; requires L to be a perfect square.
    Grid,
    /// 1 x L strip of full-height cells.
    Strip,
}

/// Static parameters of the simulated area and channel model.
///
/// Defaults reproduce the standard setup: a 400 m square, K = 16 users,
/// L = 4 cells with N_t = 16 antennas each, M = 64 access points, 1900 MHz
/// carrier, 8 dB shadowing and breakpoints at 10 m / 50 m.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Side length of the square coverage area (m).
    pub area_side: f64,
    /// Total number of single-antenna users, K.
    pub num_users: usize,
    /// Number of cells, L.
    pub num_cells: usize,
    /// Antennas per base station, N_t.
    pub bs_antennas: usize,
    /// Number of cell-free access points, M. Must equal L * N_t.
    pub num_aps: usize,
    /// Carrier frequency (MHz).
    pub carrier_freq_mhz: f64,
    /// AP / BS antenna height (m).
    pub ap_height_m: f64,
    /// User antenna height (m).
    pub user_height_m: f64,
    /// Inner path-loss breakpoint d0 (m).
    pub breakpoint_inner_m: f64,
    /// Outer path-loss breakpoint d1 (m).
    pub breakpoint_outer_m: f64,
    /// Shadow-fading standard deviation (dB), applied beyond d1.
    pub shadowing_std_db: f64,
    /// Cross-cell coupling scalar in [0, 1] scaling all inter-cell terms.
    pub coupling: f64,
    /// Apply distance-dependent large-scale fading to multicell links too.
    pub multicell_pathloss: bool,
    /// Cell tiling scheme.
    pub cell_layout: CellLayout,
    /// Seed for position draws; channel draws take a separate RNG.
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            area_side: 400.0,
            num_users: 16,
            num_cells: 4,
            bs_antennas: 16,
            num_aps: 64,
            carrier_freq_mhz: 1900.0,
            ap_height_m: 15.0,
            user_height_m: 1.5,
            breakpoint_inner_m: 10.0,
            breakpoint_outer_m: 50.0,
            shadowing_std_db: 8.0,
            coupling: 1.0,
            multicell_pathloss: true,
            cell_layout: CellLayout::Grid,
            rng_seed: 1,
        }
    }
}

impl ScenarioConfig {
    /// Users per cell, K_c = K / L.
    pub fn users_per_cell(&self) -> usize {
        self.num_users / self.num_cells
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let err = |m: String| Err(ScenarioError::InvalidConfig(m));
        if !(self.area_side > 0.0) {
            return err(format!("area_side must be positive, got {}", self.area_side));
        }
        if self.num_users == 0 || self.num_cells == 0 || self.bs_antennas == 0 {
            return err("num_users, num_cells and bs_antennas must all be at least 1".into());
        }
        if self.num_users % self.num_cells != 0 {
            return err(format!(
                "num_users ({}) must be divisible by num_cells ({})",
                self.num_users, self.num_cells
            ));
        }
        if self.num_aps != self.num_cells * self.bs_antennas {
            return err(format!(
                "num_aps ({}) must equal num_cells * bs_antennas ({})",
                self.num_aps,
                self.num_cells * self.bs_antennas
            ));
        }
        if self.cell_layout == CellLayout::Grid && !is_perfect_square(self.num_cells) {
            return err(format!(
                "grid cell layout requires num_cells to be a perfect square (1, 4, 9, ...), \
                 got {}; use cell_layout = \"strip\" for other values",
                self.num_cells
            ));
        }
        if !(self.breakpoint_inner_m > 0.0
            && self.breakpoint_inner_m < self.breakpoint_outer_m
            && self.breakpoint_outer_m < self.area_side)
        {
            return err(format!(
                "breakpoints must satisfy 0 < d0 < d1 < area_side, got d0={}, d1={}, side={}",
                self.breakpoint_inner_m, self.breakpoint_outer_m, self.area_side
            ));
        }
        if !(self.carrier_freq_mhz > 0.0 && self.ap_height_m > 0.0 && self.user_height_m > 0.0) {
            return err("carrier frequency and antenna heights must be positive".into());
        }
        if !(self.shadowing_std_db >= 0.0) {
            return err(format!("shadowing_std_db must be >= 0, got {}", self.shadowing_std_db));
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return err(format!("coupling must lie in [0, 1], got {}", self.coupling));
        }
        Ok(())
    }

    /// Axis-aligned rectangle of cell `s` as (x0, y0, width, height).
    fn cell_rect(&self, s: usize) -> (f64, f64, f64, f64) {
        match self.cell_layout {
            CellLayout::Grid => {
                let g = isqrt(self.num_cells);
                let w = self.area_side / g as f64;
                let (row, col) = (s / g, s % g);
                (col as f64 * w, row as f64 * w, w, w)
            }
            CellLayout::Strip => {
                let w = self.area_side / self.num_cells as f64;
                (s as f64 * w, 0.0, w, self.area_side)
            }
        }
    }
}

fn isqrt(n: usize) -> usize {
    (n as f64).sqrt().round() as usize
}

fn is_perfect_square(n: usize) -> bool {
    let r = isqrt(n);
    r * r == n
}

/// One drop of network geometry.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// Side length of the square area the drop lives in (m).
    pub area_side: f64,
    /// AP positions, length M.
    pub ap_positions: Vec<Point>,
    /// BS positions at cell centers, length L.
    pub bs_positions: Vec<Point>,
    /// User positions, length K; users are stored cell-major.
    pub user_positions: Vec<Point>,
    /// Serving cell index per user.
    pub cell_of_user: Vec<usize>,
    /// Global user indices per cell, each ascending; lengths all equal K_c.
    pub users_of_cell: Vec<Vec<usize>>,
    /// AP-to-user Euclidean distances, M x K.
    pub ap_user_distance: DMatrix<f64>,
    /// BS-to-user Euclidean distances, L x K.
    pub bs_user_distance: DMatrix<f64>,
}

/// Draws AP and user positions uniformly over the square and places one BS
/// at each cell center.
///
/// Users are drawn K_c at a time inside each cell so every cell serves
/// exactly K_c users while the ensemble still covers the whole square
/// uniformly; both networks consume the same positions. Deterministic given
/// `config.rng_seed`: APs are drawn first, then users cell by cell.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<Scenario, ScenarioError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let side = config.area_side;

    let bs_positions: Vec<Point> = (0..config.num_cells)
        .map(|s| {
            let (x0, y0, w, h) = config.cell_rect(s);
            Point { x: x0 + w / 2.0, y: y0 + h / 2.0 }
        })
        .collect();

    let ap_positions: Vec<Point> = (0..config.num_aps)
        .map(|_| Point { x: rng.gen_range(0.0..side), y: rng.gen_range(0.0..side) })
        .collect();

    let k_c = config.users_per_cell();
    let mut user_positions = Vec::with_capacity(config.num_users);
    let mut cell_of_user = Vec::with_capacity(config.num_users);
    let mut users_of_cell = vec![Vec::with_capacity(k_c); config.num_cells];
    for s in 0..config.num_cells {
        let (x0, y0, w, h) = config.cell_rect(s);
        for _ in 0..k_c {
            users_of_cell[s].push(user_positions.len());
            cell_of_user.push(s);
            user_positions.push(Point {
                x: x0 + rng.gen_range(0.0..w),
                y: y0 + rng.gen_range(0.0..h),
            });
        }
    }

    let ap_user_distance = DMatrix::from_fn(config.num_aps, config.num_users, |m, k| {
        ap_positions[m].distance_to(&user_positions[k])
    });
    let bs_user_distance = DMatrix::from_fn(config.num_cells, config.num_users, |l, k| {
        bs_positions[l].distance_to(&user_positions[k])
    });

    Ok(Scenario {
        area_side: side,
        ap_positions,
        bs_positions,
        user_positions,
        cell_of_user,
        users_of_cell,
        ap_user_distance,
        bs_user_distance,
    })
}

/// Fixed offset D (dB) of the three-slope path-loss model, from the carrier
/// frequency and antenna heights.
pub fn path_loss_offset_db(config: &ScenarioConfig) -> f64 {
    let f = config.carrier_freq_mhz;
    let log_f = f.log10();
    46.3 + 33.9 * log_f - 13.82 * config.ap_height_m.log10()
        - (1.11 * log_f - 0.7) * config.user_height_m
        + 1.56 * log_f
        - 0.8
}

/// Three-slope path loss (dB, negative) at distance `d` meters.
///
/// 35 dB/decade beyond d1, 20 dB/decade (with a d1-dependent offset) between
/// d0 and d1, and flat below d0. Continuous at both breakpoints.
pub fn path_loss_db(d: f64, config: &ScenarioConfig) -> Result<f64, ScenarioError> {
    if !(d > 0.0) {
        return Err(ScenarioError::NonPositiveDistance(d));
    }
    let dd = path_loss_offset_db(config);
    let d0 = config.breakpoint_inner_m;
    let d1 = config.breakpoint_outer_m;
    let pl = if d > d1 {
        -dd - 35.0 * d.log10()
    } else if d > d0 {
        -dd - 10.0 * (d1.powf(1.5) * d * d).log10()
    } else {
        -dd - 10.0 * (d1.powf(1.5) * d0 * d0).log10()
    };
    Ok(pl)
}

/// Linear large-scale coefficient from a path loss and a standard-normal
/// shadowing draw `z`. Links at or below the outer breakpoint see no
/// shadowing.
pub fn large_scale_coeff(pl_db: f64, z: f64, d: f64, config: &ScenarioConfig) -> f64 {
    let shadow_db = if d > config.breakpoint_outer_m {
        config.shadowing_std_db * z
    } else {
        0.0
    };
    10f64.powf((pl_db + shadow_db) / 10.0)
}

/// Channel state for one coherence interval.
///
/// Large-scale gains of both networks are divided by one shared normalizer
/// (the raw mean of the cell-free gain matrix) so that channel powers are
/// O(1) and a noise-variance sweep reads directly as an SNR axis. The raw
/// scale is kept in `gain_normalizer`.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    /// Normalized cell-free large-scale gains, M x K.
    pub beta_ap: DMatrix<f64>,
    /// Small-scale coefficients h_mk ~ CN(0, 1), M x K.
    pub small_scale: DMatrix<Complex64>,
    /// Cell-free channel matrix, `[G]_mk = sqrt(beta_mk) * h_mk`, M x K.
    pub g: DMatrix<Complex64>,
    /// Normalized multicell large-scale gains, L x K (ones when disabled).
    pub beta_bs: DMatrix<f64>,
    /// `h_cross[s][l]`: channel from BS l to the users of cell s, K_c x N_t.
    /// `h_cross[s][s]` is the serving channel of cell s.
    pub h_cross: Vec<Vec<DMatrix<Complex64>>>,
    /// Coupling matrix, L x L; off-diagonal entries scale inter-cell terms.
    pub q: DMatrix<f64>,
    /// Raw mean cell-free large-scale gain divided out of both networks.
    pub gain_normalizer: f64,
}

/// One unit-variance circularly-symmetric complex Gaussian draw.
pub fn sample_cn01<R: Rng>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Draws one coherence interval of channels for both networks.
///
/// Draw order (fixed for reproducibility): cell-free shadowing row-major,
/// cell-free small-scale row-major, multicell shadowing row-major, then the
/// per-(cell, BS) small-scale blocks.
pub fn realize_channels<R: Rng>(
    scenario: &Scenario,
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<ChannelRealization, ScenarioError> {
    let m = config.num_aps;
    let k = config.num_users;
    let l = config.num_cells;
    let k_c = config.users_per_cell();

    let mut beta_ap = DMatrix::zeros(m, k);
    for i in 0..m {
        for j in 0..k {
            let d = scenario.ap_user_distance[(i, j)];
            let pl = path_loss_db(d, config)?;
            let z: f64 = rng.sample(StandardNormal);
            beta_ap[(i, j)] = large_scale_coeff(pl, z, d, config);
        }
    }
    let gain_normalizer = beta_ap.mean();
    beta_ap /= gain_normalizer;

    let mut small_scale = DMatrix::zeros(m, k);
    for i in 0..m {
        for j in 0..k {
            small_scale[(i, j)] = sample_cn01(rng);
        }
    }
    let g = DMatrix::from_fn(m, k, |i, j| small_scale[(i, j)] * beta_ap[(i, j)].sqrt());

    let beta_bs = if config.multicell_pathloss {
        let mut b = DMatrix::zeros(l, k);
        for i in 0..l {
            for j in 0..k {
                let d = scenario.bs_user_distance[(i, j)];
                let pl = path_loss_db(d, config)?;
                let z: f64 = rng.sample(StandardNormal);
                b[(i, j)] = large_scale_coeff(pl, z, d, config) / gain_normalizer;
            }
        }
        b
    } else {
        DMatrix::from_element(l, k, 1.0)
    };

    // Co-located antennas of one BS share the user's beta; small-scale draws
    // are independent per antenna.
    let mut h_cross = Vec::with_capacity(l);
    for s in 0..l {
        let mut row = Vec::with_capacity(l);
        for bs in 0..l {
            let mut h = DMatrix::zeros(k_c, config.bs_antennas);
            for (r, &user) in scenario.users_of_cell[s].iter().enumerate() {
                let amp = beta_bs[(bs, user)].sqrt();
                for a in 0..config.bs_antennas {
                    h[(r, a)] = sample_cn01(rng) * amp;
                }
            }
            row.push(h);
        }
        h_cross.push(row);
    }

    let q = DMatrix::from_fn(l, l, |s, t| if s == t { 1.0 } else { config.coupling });

    Ok(ChannelRealization {
        beta_ap,
        small_scale,
        g,
        beta_bs,
        h_cross,
        q,
        gain_normalizer,
    })
}
