//! Monte Carlo experiment engine: seeded SNR sweeps over both network types
//! and all schedulers, with optional network-centric AP clustering.
//!
//! Power conventions: the symbol energy P_s fixes the transmit gain
//! rho_f = P_s and the noise variance at a sweep point is
//! sigma_w^2 = rho_f * 10^(-SNR_dB / 10). Precoders are rescaled to
//! trace(P P^H) = n (unit average power per scheduled user) before rate
//! evaluation, while the water-filling budget of the ZFS metric and the
//! MMSE loading use the aggregate transmit power of the architecture
//! (M * P_s cell-free, N_t * P_s per cell).
//!
//! Each trial draws one scenario and one channel realization shared by the
//! multicell and cell-free arms, so comparisons see identical user and AP
//! positions. Trials run in parallel and are reduced in trial order, which
//! keeps every output byte-identical for a fixed master seed.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::precoding::{self, PrecoderKind};
use crate::rates;
use crate::scenario::{
    generate_scenario, realize_channels, ChannelRealization, Point, Scenario, ScenarioConfig,
    ScenarioError,
};
use crate::scheduling::{
    self, charge_cellfree_rate, charge_multicell_rate, Criterion, FlopCounter, JointCriterion,
    ScheduleError,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment configuration: {0}")]
    InvalidExperiment(String),
    #[error("cluster {index} contains no access points")]
    EmptyCluster { index: usize },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Network architecture under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Network {
    Cellfree,
    Multicell,
}

impl std::fmt::Display for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Network::Cellfree => "cellfree",
            Network::Multicell => "multicell",
        })
    }
}

/// User-scheduling method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(rename = "none")]
    NoScheduling,
    Zfs,
    EnhancedRate,
    EnhancedCorr,
    Exhaustive,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::NoScheduling => "none",
            Method::Zfs => "zfs",
            Method::EnhancedRate => "enhanced_rate",
            Method::EnhancedCorr => "enhanced_corr",
            Method::Exhaustive => "exhaustive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringConfig {
    pub enabled: bool,
    pub clusters: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig { enabled: false, clusters: 4 }
    }
}

/// Full sweep specification.
///
/// Scalar fields precede the `clustering` and `scenario` tables so the
/// struct serializes to valid TOML as-is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub snr_points_db: Vec<f64>,
    pub n_trials: usize,
    pub methods: Vec<Method>,
    pub networks: Vec<Network>,
    /// Scheduled-user target K_s (network-wide).
    pub scheduled_users: usize,
    pub precoders: Vec<PrecoderKind>,
    /// Symbol energy P_s.
    pub symbol_energy: f64,
    /// Largest subset count an exhaustive search may enumerate.
    pub exhaustive_cap: u64,
    pub master_seed: u64,
    pub clustering: ClusteringConfig,
    pub scenario: ScenarioConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            snr_points_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            n_trials: 100,
            methods: vec![
                Method::NoScheduling,
                Method::Zfs,
                Method::EnhancedRate,
                Method::EnhancedCorr,
                Method::Exhaustive,
            ],
            networks: vec![Network::Cellfree, Network::Multicell],
            scheduled_users: 8,
            precoders: vec![PrecoderKind::Zf, PrecoderKind::Mmse],
            symbol_energy: 1.0,
            exhaustive_cap: 1_000_000,
            master_seed: 1,
            clustering: ClusteringConfig::default(),
            scenario: ScenarioConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Per-cell scheduling target for the multicell arm.
    pub fn multicell_target(&self) -> usize {
        (self.scheduled_users / self.scenario.num_cells).max(1)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::InvalidExperiment(m));
        self.scenario.validate()?;
        if self.n_trials == 0 {
            return err("n_trials must be at least 1".into());
        }
        if self.snr_points_db.is_empty() {
            return err("snr_points_db must not be empty".into());
        }
        if self.methods.is_empty() || self.networks.is_empty() || self.precoders.is_empty() {
            return err("methods, networks and precoders must all be non-empty".into());
        }
        if has_duplicates(&self.methods)
            || has_duplicates(&self.networks)
            || has_duplicates(&self.precoders)
        {
            return err("methods, networks and precoders must not repeat entries".into());
        }
        let mut snrs = self.snr_points_db.clone();
        snrs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if snrs.windows(2).any(|w| w[0] == w[1]) || snrs.iter().any(|s| !s.is_finite()) {
            return err("snr_points_db must be finite and free of duplicates".into());
        }
        let k = self.scenario.num_users;
        if self.scheduled_users == 0 || self.scheduled_users > k {
            return err(format!(
                "scheduled_users must lie in 1..={k}, got {}",
                self.scheduled_users
            ));
        }
        if self.networks.contains(&Network::Cellfree)
            && self.scheduled_users > self.scenario.num_aps
        {
            return err(format!(
                "cell-free arm cannot zero-force {} users with {} APs",
                self.scheduled_users, self.scenario.num_aps
            ));
        }
        if self.networks.contains(&Network::Multicell) {
            let t = self.multicell_target();
            if t > self.scenario.bs_antennas || t > self.scenario.users_per_cell() {
                return err(format!(
                    "per-cell target {t} exceeds the antenna bound ({}) or cell population ({})",
                    self.scenario.bs_antennas,
                    self.scenario.users_per_cell()
                ));
            }
        }
        if self.clustering.enabled {
            let c = self.clustering.clusters;
            let g = (c as f64).sqrt().round() as usize;
            if c == 0 || g * g != c {
                return err(format!(
                    "clustering.clusters must be a perfect square for a grid partition, got {c}"
                ));
            }
        }
        if !(self.symbol_energy > 0.0) {
            return err(format!("symbol_energy must be positive, got {}", self.symbol_energy));
        }
        if self.exhaustive_cap == 0 {
            return err("exhaustive_cap must be at least 1".into());
        }
        Ok(())
    }
}

fn has_duplicates<T: PartialEq>(xs: &[T]) -> bool {
    xs.iter().enumerate().any(|(i, x)| xs[..i].contains(x))
}

/// One aggregated result line.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub network: Network,
    pub method: Method,
    pub precoder: PrecoderKind,
    pub snr_db: f64,
    pub mean_sum_rate: f64,
    pub stderr: f64,
    pub mean_flops: f64,
}

/// Aggregated sweep output; rows are ordered by
/// (network, method, precoder) name and ascending SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub warnings: Vec<String>,
    /// Per-trial violations of exhaustive >= enhanced_rate >= zfs
    /// (same evaluator, equal set sizes). Zero on a correct build.
    pub dominance_violations: u64,
    pub n_trials: usize,
}

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

/// SplitMix64-style derivation of independent sub-seeds per (trial, stream).
fn mix_seed(master: u64, trial: u64, stream: u64) -> u64 {
    let mut z = master
        ^ trial.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scenario configuration used for one sweep trial: the configured geometry
/// with the position seed derived from the master seed.
pub fn trial_scenario_config(config: &ExperimentConfig, trial: u64) -> ScenarioConfig {
    ScenarioConfig {
        rng_seed: mix_seed(config.master_seed, trial, 0),
        ..config.scenario.clone()
    }
}

// ---------------------------------------------------------------------------
// Clustering
// ---------------------------------------------------------------------------

fn grid_partition(points: &[Point], side: f64, grid: usize) -> Vec<Vec<usize>> {
    let width = side / grid as f64;
    let mut out = vec![Vec::new(); grid * grid];
    for (i, p) in points.iter().enumerate() {
        let col = ((p.x / width) as usize).min(grid - 1);
        let row = ((p.y / width) as usize).min(grid - 1);
        out[row * grid + col].push(i);
    }
    out
}

/// Disjoint geographic partition of AP indices over an n-cluster grid.
/// Every AP lands in exactly one cluster; an AP-free cluster is an error.
pub fn cluster_aps(scenario: &Scenario, n_clusters: usize) -> Result<Vec<Vec<usize>>, HarnessError> {
    if n_clusters == 0 {
        return Err(HarnessError::InvalidExperiment("cluster count must be positive".into()));
    }
    let grid = (n_clusters as f64).sqrt().round() as usize;
    if grid * grid != n_clusters {
        return Err(HarnessError::InvalidExperiment(format!(
            "cluster count {n_clusters} does not tile the square; use a perfect square"
        )));
    }
    let clusters = grid_partition(&scenario.ap_positions, scenario.area_side, grid);
    if let Some(index) = clusters.iter().position(|c| c.is_empty()) {
        return Err(HarnessError::EmptyCluster { index });
    }
    Ok(clusters)
}

// ---------------------------------------------------------------------------
// Rate evaluation
// ---------------------------------------------------------------------------

/// Rate of one cell-free user subset under the configured precoder, or
/// negative infinity when the subset cannot be served.
fn cf_rate_value(
    g: &DMatrix<Complex64>,
    set: &[usize],
    kind: PrecoderKind,
    rho_f: f64,
    noise_var: f64,
    budget: f64,
) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let g_sel = g.select_columns(set.iter());
    let h_eff = g_sel.transpose();
    let raw = match kind {
        PrecoderKind::Zf => precoding::zf_precoder(&h_eff),
        PrecoderKind::Mmse => {
            let loading = noise_var * set.len() as f64 / (rho_f * budget);
            precoding::mmse_precoder(&h_eff, loading)
        }
    };
    let raw = match raw {
        Ok(p) => p,
        Err(_) => return f64::NEG_INFINITY,
    };
    let p = precoding::normalize_transmit_power(&raw, set.len() as f64);
    match rates::cellfree_sum_rate(&g_sel, &p, rho_f, noise_var) {
        Ok(r) => r.total,
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Network sum rate of one joint multicell selection, or negative infinity
/// when some cell cannot be served.
fn mc_rate_value(
    chan: &ChannelRealization,
    sets: &[Vec<usize>],
    kind: PrecoderKind,
    rho_f: f64,
    noise_var: f64,
    per_cell_budget: f64,
) -> f64 {
    let cells = chan.h_cross.len();
    let antennas = chan.h_cross[0][0].ncols();
    let mut precoders = Vec::with_capacity(cells);
    for s in 0..cells {
        let n_s = sets[s].len();
        if n_s == 0 {
            precoders.push(DMatrix::zeros(antennas, 0));
            continue;
        }
        let h_rows = chan.h_cross[s][s].select_rows(sets[s].iter());
        let raw = match kind {
            PrecoderKind::Zf => precoding::zf_precoder(&h_rows),
            PrecoderKind::Mmse => {
                let loading = noise_var * n_s as f64 / (rho_f * per_cell_budget);
                precoding::mmse_precoder(&h_rows, loading)
            }
        };
        match raw {
            Ok(p) => precoders.push(precoding::normalize_transmit_power(&p, n_s as f64)),
            Err(_) => return f64::NEG_INFINITY,
        }
    }
    match rates::multicell_sum_rate(&chan.h_cross, &precoders, sets, &chan.q, noise_var / rho_f) {
        Ok(r) => r.total,
        Err(_) => f64::NEG_INFINITY,
    }
}

// ---------------------------------------------------------------------------
// Per-trial execution
// ---------------------------------------------------------------------------

/// A cell-free scheduling domain: the whole network, or one AP cluster with
/// the users inside its region.
struct CfSubsystem {
    /// Channel columns restricted to this subsystem, AP rows x user columns.
    g: DMatrix<Complex64>,
    /// Global user indices behind the local columns.
    user_ids: Vec<usize>,
    /// Scheduling target for this subsystem.
    target: usize,
    /// Water-filling / loading power budget (AP count times P_s).
    budget: f64,
}

fn build_cellfree_subsystems(
    config: &ExperimentConfig,
    scenario: &Scenario,
    chan: &ChannelRealization,
) -> Result<Vec<CfSubsystem>, HarnessError> {
    let rho = config.symbol_energy;
    if !config.clustering.enabled {
        return Ok(vec![CfSubsystem {
            g: chan.g.clone(),
            user_ids: (0..config.scenario.num_users).collect(),
            target: config.scheduled_users,
            budget: config.scenario.num_aps as f64 * rho,
        }]);
    }
    let n = config.clustering.clusters;
    let ap_clusters = cluster_aps(scenario, n)?;
    let grid = (n as f64).sqrt().round() as usize;
    let user_clusters = grid_partition(&scenario.user_positions, scenario.area_side, grid);
    let base_target = (config.scheduled_users / n).max(1);

    let mut subsystems = Vec::with_capacity(n);
    for (aps, users) in ap_clusters.iter().zip(user_clusters.iter()) {
        let target = base_target.min(users.len()).min(aps.len());
        subsystems.push(CfSubsystem {
            g: chan.g.select_rows(aps.iter()).select_columns(users.iter()),
            user_ids: users.clone(),
            target,
            budget: aps.len() as f64 * rho,
        });
    }
    Ok(subsystems)
}

/// Outcome of one (network, method, precoder, SNR) evaluation in one trial.
struct MethodRun {
    sum_rate: f64,
    flops: u64,
    /// All scheduled sets hit their nominal targets, so the run may enter
    /// the dominance comparison.
    comparable: bool,
    /// Selected users as global indices, one list per subsystem or cell.
    selected: Vec<Vec<usize>>,
}

enum MethodFailure {
    Capacity(String),
    Fatal(HarnessError),
}

impl From<ScheduleError> for MethodFailure {
    fn from(e: ScheduleError) -> Self {
        match e {
            ScheduleError::CapacityExceeded { .. } => MethodFailure::Capacity(e.to_string()),
            other => MethodFailure::Fatal(other.into()),
        }
    }
}

fn run_cellfree_method(
    subsystems: &[CfSubsystem],
    method: Method,
    kind: PrecoderKind,
    rho_f: f64,
    noise_var: f64,
    cap: u64,
) -> Result<MethodRun, MethodFailure> {
    let mut total_rate = 0.0;
    let mut fc = FlopCounter::new();
    let mut comparable = true;
    let mut selected_global = Vec::with_capacity(subsystems.len());

    for sub in subsystems {
        let users = sub.g.ncols();
        let antennas = sub.g.nrows();
        if users == 0 || (sub.target == 0 && method != Method::NoScheduling) {
            selected_global.push(Vec::new());
            continue;
        }
        let h_eff = sub.g.transpose();
        let mut eval = |set: &[usize], fc: &mut FlopCounter| {
            charge_cellfree_rate(fc, set.len(), antennas);
            cf_rate_value(&sub.g, set, kind, rho_f, noise_var, sub.budget)
        };
        let mut set: Vec<usize> = match method {
            Method::NoScheduling => (0..users).collect(),
            Method::Zfs => {
                let r = scheduling::zfs_schedule(&h_eff, sub.target, sub.budget, &mut fc)?;
                comparable &= r.selected.len() == sub.target;
                r.selected
            }
            Method::EnhancedRate => {
                let r = scheduling::enhanced_greedy_schedule(
                    &h_eff,
                    sub.target,
                    sub.budget,
                    Criterion::SumRate(&mut eval),
                    &mut fc,
                )?;
                comparable &= r.selected.len() == sub.target;
                r.selected
            }
            Method::EnhancedCorr => {
                let r = scheduling::enhanced_greedy_schedule(
                    &h_eff,
                    sub.target,
                    sub.budget,
                    Criterion::Correlation,
                    &mut fc,
                )?;
                comparable &= r.selected.len() == sub.target;
                r.selected
            }
            Method::Exhaustive => {
                scheduling::exhaustive_schedule(users, sub.target, &mut eval, cap, &mut fc)?
                    .selected
            }
        };
        set.sort_unstable();
        total_rate += cf_rate_value(&sub.g, &set, kind, rho_f, noise_var, sub.budget);
        selected_global.push(set.iter().map(|&i| sub.user_ids[i]).collect());
    }

    Ok(MethodRun { sum_rate: total_rate, flops: fc.total(), comparable, selected: selected_global })
}

fn run_multicell_method(
    chan: &ChannelRealization,
    scenario: &Scenario,
    cells: &[DMatrix<Complex64>],
    target: usize,
    per_cell_budget: f64,
    method: Method,
    kind: PrecoderKind,
    rho_f: f64,
    noise_var: f64,
    cap: u64,
) -> Result<MethodRun, MethodFailure> {
    let antennas = cells[0].ncols();
    let mut fc = FlopCounter::new();
    let mut comparable = true;

    let mut eval = |sets: &[Vec<usize>], fc: &mut FlopCounter| {
        let sizes: Vec<usize> = sets.iter().map(Vec::len).collect();
        charge_multicell_rate(fc, &sizes, antennas);
        mc_rate_value(chan, sets, kind, rho_f, noise_var, per_cell_budget)
    };

    let mut sets: Vec<Vec<usize>> = match method {
        Method::NoScheduling => cells.iter().map(|c| (0..c.nrows()).collect()).collect(),
        Method::Zfs => {
            let per_cell = scheduling::zfs_multicell(cells, target, per_cell_budget, &mut fc)?;
            comparable &= per_cell.iter().all(|r| r.selected.len() == target);
            per_cell.into_iter().map(|r| r.selected).collect()
        }
        Method::EnhancedRate => {
            let r = scheduling::enhanced_greedy_multicell(
                cells,
                target,
                per_cell_budget,
                JointCriterion::SumRate(&mut eval),
                &mut fc,
            )?;
            comparable &= r.per_cell.iter().all(|s| s.len() == target);
            r.per_cell
        }
        Method::EnhancedCorr => {
            let r = scheduling::enhanced_greedy_multicell(
                cells,
                target,
                per_cell_budget,
                JointCriterion::Correlation,
                &mut fc,
            )?;
            comparable &= r.per_cell.iter().all(|s| s.len() == target);
            r.per_cell
        }
        Method::Exhaustive => {
            scheduling::exhaustive_multicell(cells, target, &mut eval, cap, &mut fc)?.per_cell
        }
    };
    for s in sets.iter_mut() {
        s.sort_unstable();
    }

    let sum_rate = mc_rate_value(chan, &sets, kind, rho_f, noise_var, per_cell_budget);
    let selected = sets
        .iter()
        .enumerate()
        .map(|(s, rows)| rows.iter().map(|&r| scenario.users_of_cell[s][r]).collect())
        .collect();

    Ok(MethodRun { sum_rate, flops: fc.total(), comparable, selected })
}

struct ComboGrid {
    networks: Vec<Network>,
    methods: Vec<Method>,
    precoders: Vec<PrecoderKind>,
    snrs: Vec<f64>,
}

impl ComboGrid {
    fn new(config: &ExperimentConfig) -> Self {
        let mut networks = config.networks.clone();
        networks.sort();
        let mut methods = config.methods.clone();
        methods.sort_by_key(|m| m.to_string());
        let mut precoders = config.precoders.clone();
        precoders.sort();
        let mut snrs = config.snr_points_db.clone();
        snrs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ComboGrid { networks, methods, precoders, snrs }
    }

    fn len(&self) -> usize {
        self.networks.len() * self.methods.len() * self.precoders.len() * self.snrs.len()
    }

    fn index(&self, ni: usize, mi: usize, pi: usize, si: usize) -> usize {
        ((ni * self.methods.len() + mi) * self.precoders.len() + pi) * self.snrs.len() + si
    }
}

struct TrialOutput {
    /// (sum_rate, flops) per combo; None when the method was skipped.
    values: Vec<Option<(f64, u64)>>,
    dominance_violations: u64,
    warnings: Vec<String>,
}

fn run_trial(
    config: &ExperimentConfig,
    grid: &ComboGrid,
    trial: u64,
) -> Result<TrialOutput, HarnessError> {
    let scenario_cfg = trial_scenario_config(config, trial);
    let scenario = generate_scenario(&scenario_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.master_seed, trial, 1));
    let chan = realize_channels(&scenario, &scenario_cfg, &mut rng)?;
    let rho = config.symbol_energy;

    let mut out = TrialOutput {
        values: vec![None; grid.len()],
        dominance_violations: 0,
        warnings: Vec::new(),
    };

    for (ni, &network) in grid.networks.iter().enumerate() {
        let cf_subsystems = match network {
            Network::Cellfree => Some(build_cellfree_subsystems(config, &scenario, &chan)?),
            Network::Multicell => None,
        };
        let mc_cells: Vec<DMatrix<Complex64>> = match network {
            Network::Multicell => (0..config.scenario.num_cells)
                .map(|s| chan.h_cross[s][s].clone())
                .collect(),
            Network::Cellfree => Vec::new(),
        };
        let per_cell_budget = config.scenario.bs_antennas as f64 * rho;

        for (pi, &kind) in grid.precoders.iter().enumerate() {
            for (si, &snr) in grid.snrs.iter().enumerate() {
                let noise_var = rho * 10f64.powf(-snr / 10.0);
                let mut chain: [Option<(f64, bool)>; 3] = [None, None, None];

                for (mi, &method) in grid.methods.iter().enumerate() {
                    let run = match network {
                        Network::Cellfree => run_cellfree_method(
                            cf_subsystems.as_ref().unwrap(),
                            method,
                            kind,
                            rho,
                            noise_var,
                            config.exhaustive_cap,
                        ),
                        Network::Multicell => run_multicell_method(
                            &chan,
                            &scenario,
                            &mc_cells,
                            config.multicell_target(),
                            per_cell_budget,
                            method,
                            kind,
                            rho,
                            noise_var,
                            config.exhaustive_cap,
                        ),
                    };
                    let idx = grid.index(ni, mi, pi, si);
                    match run {
                        Ok(r) => {
                            if !r.sum_rate.is_finite() {
                                out.warnings.push(format!(
                                    "{network}/{method}/{kind}@{snr}dB: unservable selection"
                                ));
                            }
                            match method {
                                Method::Zfs => chain[0] = Some((r.sum_rate, r.comparable)),
                                Method::EnhancedRate => chain[1] = Some((r.sum_rate, r.comparable)),
                                Method::Exhaustive => chain[2] = Some((r.sum_rate, true)),
                                _ => {}
                            }
                            out.values[idx] = Some((r.sum_rate, r.flops));
                        }
                        Err(MethodFailure::Capacity(msg)) => {
                            out.warnings.push(format!(
                                "{network}/{method}: skipped ({msg})"
                            ));
                        }
                        Err(MethodFailure::Fatal(e)) => return Err(e),
                    }
                }

                if let (Some((zfs, zc)), Some((enh, ec)), Some((ex, _))) =
                    (chain[0], chain[1], chain[2])
                {
                    if zc && ec && !(ex >= enh && enh >= zfs) {
                        out.dominance_violations += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Runs the full Monte Carlo sweep.
///
/// Deterministic given `master_seed`; a method that exceeds the exhaustive
/// cap in any trial reports NaN statistics and a warning instead of a
/// partial mean.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepReport, HarnessError> {
    config.validate()?;
    let grid = ComboGrid::new(config);

    let trials: Result<Vec<TrialOutput>, HarnessError> = (0..config.n_trials as u64)
        .into_par_iter()
        .map(|t| run_trial(config, &grid, t))
        .collect();
    let trials = trials?;

    let mut rows = Vec::with_capacity(grid.len());
    let mut warnings: Vec<String> = Vec::new();
    let mut violations = 0;
    for t in &trials {
        violations += t.dominance_violations;
        for w in &t.warnings {
            if !warnings.contains(w) {
                warnings.push(w.clone());
            }
        }
    }

    for (ni, &network) in grid.networks.iter().enumerate() {
        for (mi, &method) in grid.methods.iter().enumerate() {
            for (pi, &precoder) in grid.precoders.iter().enumerate() {
                for (si, &snr_db) in grid.snrs.iter().enumerate() {
                    let idx = grid.index(ni, mi, pi, si);
                    let samples: Vec<(f64, u64)> =
                        trials.iter().filter_map(|t| t.values[idx]).collect();
                    let (mean_sum_rate, stderr, mean_flops) =
                        if samples.len() == config.n_trials {
                            let rates: Vec<f64> = samples.iter().map(|s| s.0).collect();
                            let (mean, se) = mean_stderr(&rates);
                            let flops = samples.iter().map(|s| s.1 as f64).sum::<f64>()
                                / samples.len() as f64;
                            (mean, se, flops)
                        } else {
                            (f64::NAN, f64::NAN, f64::NAN)
                        };
                    rows.push(SweepRow {
                        network,
                        method,
                        precoder,
                        snr_db,
                        mean_sum_rate,
                        stderr,
                        mean_flops,
                    });
                }
            }
        }
    }

    Ok(SweepReport { rows, warnings, dominance_violations: violations, n_trials: config.n_trials })
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One scheduling outcome of a single realization, for inspection.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub network: Network,
    pub method: Method,
    pub precoder: PrecoderKind,
    pub snr_db: f64,
    /// Selected global user indices per subsystem (cell-free) or cell.
    pub selected: Vec<Vec<usize>>,
    pub sum_rate: f64,
    pub flops: u64,
}

/// Runs every configured (network, method, precoder) once on the channel
/// realization of `trial` at a single SNR point. Debugging aid behind the
/// `schedule` CLI subcommand.
pub fn run_single_realization(
    config: &ExperimentConfig,
    snr_db: f64,
    trial: u64,
) -> Result<Vec<MethodOutcome>, HarnessError> {
    config.validate()?;
    let scenario_cfg = trial_scenario_config(config, trial);
    let scenario = generate_scenario(&scenario_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.master_seed, trial, 1));
    let chan = realize_channels(&scenario, &scenario_cfg, &mut rng)?;
    let rho = config.symbol_energy;
    let noise_var = rho * 10f64.powf(-snr_db / 10.0);
    let grid = ComboGrid::new(config);

    let mut outcomes = Vec::new();
    for &network in &grid.networks {
        let cf_subsystems = match network {
            Network::Cellfree => Some(build_cellfree_subsystems(config, &scenario, &chan)?),
            Network::Multicell => None,
        };
        let mc_cells: Vec<DMatrix<Complex64>> = match network {
            Network::Multicell => (0..config.scenario.num_cells)
                .map(|s| chan.h_cross[s][s].clone())
                .collect(),
            Network::Cellfree => Vec::new(),
        };
        for &kind in &grid.precoders {
            for &method in &grid.methods {
                let run = match network {
                    Network::Cellfree => run_cellfree_method(
                        cf_subsystems.as_ref().unwrap(),
                        method,
                        kind,
                        rho,
                        noise_var,
                        config.exhaustive_cap,
                    ),
                    Network::Multicell => run_multicell_method(
                        &chan,
                        &scenario,
                        &mc_cells,
                        config.multicell_target(),
                        config.scenario.bs_antennas as f64 * rho,
                        method,
                        kind,
                        rho,
                        noise_var,
                        config.exhaustive_cap,
                    ),
                };
                match run {
                    Ok(r) => outcomes.push(MethodOutcome {
                        network,
                        method,
                        precoder: kind,
                        snr_db,
                        selected: r.selected,
                        sum_rate: r.sum_rate,
                        flops: r.flops,
                    }),
                    Err(MethodFailure::Capacity(_)) => {}
                    Err(MethodFailure::Fatal(e)) => return Err(e),
                }
            }
        }
    }
    Ok(outcomes)
}
