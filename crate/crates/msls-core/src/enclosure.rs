//! Seeded randomized model of the direction-coding microphone enclosure.
//!
//! The hemisphere around the microphone is partitioned into sectors by
//! elevation bands and azimuth wedges with jittered cut angles. Each sector
//! carries an acoustic channel module (ACM): randomized hole sets on three
//! perforated shell layers feeding two cavities, modeled as a cascade of two
//! second-order band-pass stages over a transmission floor. Each direction
//! therefore sees its own magnitude frequency response, and the pairwise
//! coherence of those responses is the diagnostic that the randomization was
//! distinctive enough.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, norm};
use crate::spectra::{MagnitudeSpectrum, SpectralGrid, StftConfig};
use crate::util::derive_seed;

#[derive(Error, Debug)]
pub enum EnclosureError {
    #[error("invalid enclosure config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("invalid direction: {0}")]
    InvalidDirection(String),
    #[error("non-positive acm geometry: {0}")]
    BadGeometry(&'static str),
    #[error(
        "coherence target {target} not met after {attempts} draws (best achieved {best_achieved})"
    )]
    CoherenceTarget {
        target: f64,
        attempts: u32,
        best_achieved: f64,
    },
    #[error("coherence undefined for zero response")]
    ZeroResponse,
    #[error("coherence needs at least two responses")]
    TooFewResponses,
    #[error(transparent)]
    Spectra(#[from] crate::spectra::SpectraError),
}

/// Geometry and generation parameters of the enclosure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnclosureConfig {
    /// Shell radii in meters, outer to inner, strictly decreasing.
    pub shell_radii: [f64; 3],
    /// Shell thickness in meters, outer to inner.
    pub shell_thickness: [f64; 3],
    pub n_transverse_plates: usize,
    pub n_longitudinal_plates: usize,
    /// Allowed hole radius range in meters.
    pub hole_radius_range: (f64, f64),
    /// Minimum clearance between hole rims in meters.
    pub min_hole_gap: f64,
    pub seed: u64,
    pub speed_of_sound: f64,
    /// Generation fails if the probe responses stay above this coherence.
    pub max_coherence_target: f64,
    /// Base quality factor; per-stage Q is `q0 / fill_ratio`.
    pub q0: f64,
    /// Minimum transmitted magnitude so no bin is ever exactly zero.
    pub transmission_floor: f64,
    /// Blend a queried direction with the adjacent azimuth sector by angular
    /// proximity instead of using the hard partition.
    pub blend_sectors: bool,
    /// Re-draw budget when the coherence target is missed.
    pub max_retries: u32,
}

impl Default for EnclosureConfig {
    fn default() -> Self {
        EnclosureConfig {
            shell_radii: [0.24, 0.168, 0.072],
            shell_thickness: [0.01, 0.007, 0.003],
            n_transverse_plates: 8,
            n_longitudinal_plates: 16,
            hole_radius_range: (0.003, 0.03),
            min_hole_gap: 0.005,
            seed: 42,
            speed_of_sound: 343.0,
            max_coherence_target: 0.95,
            q0: 4.0,
            transmission_floor: 0.05,
            blend_sectors: false,
            max_retries: 8,
        }
    }
}

impl EnclosureConfig {
    pub fn validate(&self) -> Result<(), EnclosureError> {
        let bad = |field: &'static str, reason: String| {
            Err(EnclosureError::InvalidConfig { field, reason })
        };
        if !(self.shell_radii[0] > self.shell_radii[1]
            && self.shell_radii[1] > self.shell_radii[2]
            && self.shell_radii[2] > 0.0)
        {
            return bad(
                "shell_radii",
                format!("must be strictly decreasing and positive, got {:?}", self.shell_radii),
            );
        }
        if self.shell_thickness.iter().any(|&t| t <= 0.0) {
            return bad("shell_thickness", "must be positive".into());
        }
        if self.n_transverse_plates < 1 {
            return bad("n_transverse_plates", "must be >= 1".into());
        }
        if self.n_longitudinal_plates < 1 {
            return bad("n_longitudinal_plates", "must be >= 1".into());
        }
        let (rmin, rmax) = self.hole_radius_range;
        if rmin < 0.003 {
            return bad("hole_radius_range", format!("min {rmin} below 0.003 m floor"));
        }
        if rmax < rmin || rmax > self.shell_radii[2] {
            return bad(
                "hole_radius_range",
                format!("max {rmax} must lie in [{rmin}, {}]", self.shell_radii[2]),
            );
        }
        if self.min_hole_gap < 0.0 {
            return bad("min_hole_gap", "must be non-negative".into());
        }
        if self.speed_of_sound <= 0.0 {
            return bad("speed_of_sound", "must be positive".into());
        }
        if !(self.max_coherence_target > 0.0 && self.max_coherence_target <= 1.0) {
            return bad("max_coherence_target", "must lie in (0, 1]".into());
        }
        if self.q0 <= 0.0 {
            return bad("q0", "must be positive".into());
        }
        if !(self.transmission_floor > 0.0 && self.transmission_floor < 1.0) {
            return bad("transmission_floor", "must lie in (0, 1)".into());
        }
        Ok(())
    }

    /// Total sector count: azimuth wedges contributed by longitudinal plates
    /// plus the transverse-plate wedges of the upper bands.
    pub fn n_sectors(&self) -> usize {
        self.n_transverse_plates + self.n_longitudinal_plates
    }

    fn filter_law(&self) -> FilterLaw {
        FilterLaw {
            speed_of_sound: self.speed_of_sound,
            q0: self.q0,
            transmission_floor: self.transmission_floor,
        }
    }
}

/// Incidence direction of a source relative to the enclosure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance_m: f64,
}

impl Direction {
    pub fn new(azimuth_deg: f64, elevation_deg: f64, distance_m: f64) -> Result<Self, EnclosureError> {
        if !(0.0..360.0).contains(&azimuth_deg) {
            return Err(EnclosureError::InvalidDirection(format!(
                "azimuth {azimuth_deg} outside [0, 360)"
            )));
        }
        if !(0.0..=90.0).contains(&elevation_deg) {
            return Err(EnclosureError::InvalidDirection(format!(
                "elevation {elevation_deg} outside [0, 90]"
            )));
        }
        if distance_m <= 0.0 {
            return Err(EnclosureError::InvalidDirection(format!(
                "distance {distance_m} must be positive"
            )));
        }
        Ok(Direction {
            azimuth_deg,
            elevation_deg,
            distance_m,
        })
    }
}

/// The 16 canonical source positions: an inner ring of 8 on the floor at
/// 2.5 m and an outer ring of 8 on stands at 4.5 m, azimuth-interleaved.
/// The outer-ring elevation comes from the ~0.95 m stand height.
pub fn standard_probe_directions() -> Vec<Direction> {
    let mut dirs = Vec::with_capacity(16);
    for i in 0..8 {
        dirs.push(Direction::new(45.0 * i as f64, 0.0, 2.5).unwrap());
    }
    for i in 0..8 {
        dirs.push(Direction::new(22.5 + 45.0 * i as f64, 12.0, 4.5).unwrap());
    }
    dirs
}

/// Second-order acoustic filter parameters for one sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcmParameters {
    pub sector_id: usize,
    /// Cavity volumes in cubic meters, outer cavity first.
    pub cavity_volumes: [f64; 2],
    /// Total open hole area per perforated layer, square meters.
    pub layer_hole_area: [f64; 3],
    /// Effective neck length per layer: shell thickness plus end correction.
    pub layer_neck_length: [f64; 3],
    /// Open-area fraction per layer.
    pub fill_ratios: [f64; 3],
}

/// Parameters of the stage-response law shared by all sectors.
#[derive(Debug, Clone, Copy)]
pub struct FilterLaw {
    pub speed_of_sound: f64,
    pub q0: f64,
    pub transmission_floor: f64,
}

/// Helmholtz resonance of a neck/cavity stage: `(c / 2 pi) sqrt(A / (V L))`.
pub fn helmholtz_resonance(area: f64, volume: f64, neck_len: f64, speed_of_sound: f64) -> f64 {
    speed_of_sound / (2.0 * std::f64::consts::PI) * (area / (volume * neck_len)).sqrt()
}

fn bandpass_magnitude(f: f64, f_res: f64, q: f64) -> f64 {
    let r = f / f_res;
    let num = r / q;
    (num * num / ((1.0 - r * r).powi(2) + num * num)).sqrt()
}

/// Magnitude response of one sector's two-stage resonator cascade on the
/// given bin grid. Values lie in `[floor, 1]`.
pub fn acm_response(
    acm: &AcmParameters,
    grid: &SpectralGrid,
    law: &FilterLaw,
) -> Result<MagnitudeSpectrum, EnclosureError> {
    if acm.cavity_volumes.iter().any(|&v| v <= 0.0) {
        return Err(EnclosureError::BadGeometry("cavity volume"));
    }
    if acm.layer_hole_area.iter().any(|&a| a <= 0.0) {
        return Err(EnclosureError::BadGeometry("hole area"));
    }
    if acm.layer_neck_length.iter().any(|&l| l <= 0.0) {
        return Err(EnclosureError::BadGeometry("neck length"));
    }
    if acm.fill_ratios.iter().any(|&r| r <= 0.0) {
        return Err(EnclosureError::BadGeometry("fill ratio"));
    }

    let stages: Vec<(f64, f64)> = (0..2)
        .map(|j| {
            let f_res = helmholtz_resonance(
                acm.layer_hole_area[j],
                acm.cavity_volumes[j],
                acm.layer_neck_length[j],
                law.speed_of_sound,
            );
            let q = law.q0 / acm.fill_ratios[j];
            (f_res, q)
        })
        .collect();

    let floor = law.transmission_floor;
    let values: Vec<f64> = (0..grid.len())
        .map(|i| {
            let f = grid.bin_freq(i);
            let m = stages
                .iter()
                .map(|&(f_res, q)| bandpass_magnitude(f, f_res, q))
                .product::<f64>();
            (m + floor).min(1.0)
        })
        .collect();
    Ok(MagnitudeSpectrum::new(values, *grid)?)
}

/// Hemisphere partition: elevation band edges and, per band, the sorted
/// azimuth cut angles of its wedges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorPartition {
    /// Ascending elevation edges from 0 to 90 inclusive; band `i` covers
    /// `[edges[i], edges[i+1])` with the top band closed at 90.
    pub elevation_edges: Vec<f64>,
    /// Per band: ascending azimuth boundaries. A band with one wedge has no
    /// boundaries. Wedge `k` covers `[bounds[k-1], bounds[k])`, with wedge 0
    /// wrapping around 0/360.
    pub azimuth_bounds: Vec<Vec<f64>>,
    /// Wedge count per band.
    pub wedges_per_band: Vec<usize>,
}

impl SectorPartition {
    pub fn n_bands(&self) -> usize {
        self.wedges_per_band.len()
    }

    pub fn n_sectors(&self) -> usize {
        self.wedges_per_band.iter().sum()
    }

    fn band_of(&self, elevation_deg: f64) -> usize {
        let nb = self.n_bands();
        for i in 0..nb {
            if elevation_deg < self.elevation_edges[i + 1] {
                return i;
            }
        }
        nb - 1
    }

    fn wedge_of(&self, band: usize, azimuth_deg: f64) -> usize {
        let w = self.wedges_per_band[band];
        if w <= 1 {
            return 0;
        }
        let bounds = &self.azimuth_bounds[band];
        let idx = bounds.partition_point(|b| *b <= azimuth_deg);
        idx % w
    }

    /// Sector containing the given direction. Total over valid directions.
    pub fn sector_of(&self, azimuth_deg: f64, elevation_deg: f64) -> usize {
        let band = self.band_of(elevation_deg);
        let wedge = self.wedge_of(band, azimuth_deg);
        self.wedges_per_band[..band].iter().sum::<usize>() + wedge
    }

    /// Angular span of the wedge holding `azimuth_deg` in `band`:
    /// `(wedge index, center degrees, half width degrees)`.
    fn wedge_geometry(&self, band: usize, azimuth_deg: f64) -> (usize, f64, f64) {
        let w = self.wedges_per_band[band];
        if w <= 1 {
            return (0, 180.0, 180.0);
        }
        let bounds = &self.azimuth_bounds[band];
        let k = self.wedge_of(band, azimuth_deg);
        let (lo, hi) = if k == 0 {
            (bounds[w - 1] - 360.0, bounds[0])
        } else {
            (bounds[k - 1], bounds[k])
        };
        (k, (lo + hi) / 2.0, (hi - lo) / 2.0)
    }
}

/// Generated enclosure: configuration, per-sector filter parameters, and the
/// hemisphere partition. Immutable after generation; every query is a pure
/// function of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnclosureModel {
    pub config: EnclosureConfig,
    pub sectors: Vec<AcmParameters>,
    pub partition: SectorPartition,
    /// Max off-diagonal probe coherence measured after generation.
    pub achieved_max_coherence: f64,
}

impl EnclosureModel {
    /// Response of the sector containing `dir`, optionally blended with the
    /// azimuthally adjacent sector. Distance never enters the response.
    pub fn direction_response(
        &self,
        dir: &Direction,
        grid: &SpectralGrid,
    ) -> Result<MagnitudeSpectrum, EnclosureError> {
        Direction::new(dir.azimuth_deg, dir.elevation_deg, dir.distance_m)?;
        let law = self.config.filter_law();
        let band = self.partition.band_of(dir.elevation_deg);
        let base_before: usize = self.partition.wedges_per_band[..band].iter().sum();
        let (wedge, center, half_width) =
            self.partition.wedge_geometry(band, dir.azimuth_deg);
        let own = acm_response(&self.sectors[base_before + wedge], grid, &law)?;

        let w = self.partition.wedges_per_band[band];
        if !self.config.blend_sectors || w < 2 {
            return Ok(own);
        }

        let mut offset = dir.azimuth_deg - center;
        if offset > 180.0 {
            offset -= 360.0;
        } else if offset < -180.0 {
            offset += 360.0;
        }
        let neighbor_wedge = if offset >= 0.0 {
            (wedge + 1) % w
        } else {
            (wedge + w - 1) % w
        };
        let blend = (offset.abs() / (2.0 * half_width)).min(0.5);
        let other = acm_response(&self.sectors[base_before + neighbor_wedge], grid, &law)?;
        let values = own
            .values()
            .iter()
            .zip(other.values())
            .map(|(a, b)| (1.0 - blend) * a + blend * b)
            .collect();
        Ok(MagnitudeSpectrum::new(values, *grid)?)
    }

    /// Responses for the 16 canonical source positions on the given grid.
    pub fn probe_responses(
        &self,
        grid: &SpectralGrid,
    ) -> Result<Vec<MagnitudeSpectrum>, EnclosureError> {
        standard_probe_directions()
            .iter()
            .map(|d| self.direction_response(d, grid))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("enclosure model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Normalized inner product of two responses.
pub fn coherence(
    h_i: &MagnitudeSpectrum,
    h_j: &MagnitudeSpectrum,
) -> Result<f64, EnclosureError> {
    if h_i.grid() != h_j.grid() {
        return Err(crate::spectra::SpectraError::GridMismatch.into());
    }
    let (ni, nj) = (norm(h_i.values()), norm(h_j.values()));
    if ni == 0.0 || nj == 0.0 {
        return Err(EnclosureError::ZeroResponse);
    }
    Ok(dot(h_i.values(), h_j.values()) / (ni * nj))
}

/// Symmetric matrix of pairwise coherences.
pub fn coherence_matrix(
    responses: &[MagnitudeSpectrum],
) -> Result<Vec<Vec<f64>>, EnclosureError> {
    if responses.len() < 2 {
        return Err(EnclosureError::TooFewResponses);
    }
    let n = responses.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        m[i][i] = coherence(&responses[i], &responses[i])?;
        for j in (i + 1)..n {
            let c = coherence(&responses[i], &responses[j])?;
            m[i][j] = c;
            m[j][i] = c;
        }
    }
    Ok(m)
}

/// Largest off-diagonal entry of a coherence matrix.
pub fn max_off_diagonal(matrix: &[Vec<f64>]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for (i, row) in matrix.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j {
                best = best.max(*v);
            }
        }
    }
    best
}

/// Mean off-diagonal entry of a symmetric similarity matrix.
pub fn mean_off_diagonal(matrix: &[Vec<f64>]) -> f64 {
    let n = matrix.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for (i, row) in matrix.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j {
                sum += v;
            }
        }
    }
    sum / (n * (n - 1)) as f64
}

/// Draw a full model from the seeded generator, re-drawing up to the retry
/// budget until the probe coherence target is met. The 16-direction probe is
/// evaluated on the default band grid.
pub fn generate_enclosure(config: &EnclosureConfig) -> Result<EnclosureModel, EnclosureError> {
    config.validate()?;
    let probe_grid = StftConfig::default().grid();
    let attempts = config.max_retries + 1;
    let mut best: Option<(EnclosureModel, f64)> = None;

    for attempt in 0..attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            config.seed,
            "enclosure-draw",
            attempt as u64,
        ));
        let mut model = draw_model(config, &mut rng);
        let responses = model.probe_responses(&probe_grid)?;
        let matrix = coherence_matrix(&responses)?;
        let achieved = max_off_diagonal(&matrix);
        model.achieved_max_coherence = achieved;
        if achieved <= config.max_coherence_target {
            return Ok(model);
        }
        if best.as_ref().is_none_or(|(_, b)| achieved < *b) {
            best = Some((model, achieved));
        }
    }

    let (_, best_achieved) = best.expect("at least one draw");
    Err(EnclosureError::CoherenceTarget {
        target: config.max_coherence_target,
        attempts,
        best_achieved,
    })
}

/// Band layout: the longitudinal plates cut the base band into wedges; the
/// transverse plates supply the wedges of the upper bands.
fn band_layout(config: &EnclosureConfig) -> (Vec<f64>, Vec<usize>) {
    let n_t = config.n_transverse_plates;
    let n_l = config.n_longitudinal_plates;
    if n_t >= 4 {
        let upper = n_t.div_ceil(4);
        let mid = n_t - upper;
        (vec![0.0, 25.0, 55.0, 90.0], vec![n_l, mid, upper])
    } else {
        (vec![0.0, 35.0, 90.0], vec![n_l, n_t])
    }
}

fn draw_model(config: &EnclosureConfig, rng: &mut ChaCha8Rng) -> EnclosureModel {
    let (nominal_edges, wedges_per_band) = band_layout(config);
    let n_bands = wedges_per_band.len();

    // Jitter interior elevation edges by up to +/-4 degrees.
    let mut elevation_edges = nominal_edges.clone();
    for e in elevation_edges.iter_mut().take(n_bands).skip(1) {
        *e += rng.random_range(-4.0..4.0);
    }

    // Jitter azimuth cuts by a fraction of the wedge width so every wedge
    // keeps a usable interior.
    let mut azimuth_bounds = Vec::with_capacity(n_bands);
    for &w in &wedges_per_band {
        if w <= 1 {
            azimuth_bounds.push(Vec::new());
            continue;
        }
        let width = 360.0 / w as f64;
        let jitter = (0.2 * width).min(5.0);
        let bounds: Vec<f64> = (0..w)
            .map(|k| (k as f64 + 0.5) * width + rng.random_range(-jitter..jitter))
            .collect();
        azimuth_bounds.push(bounds);
    }

    let partition = SectorPartition {
        elevation_edges,
        azimuth_bounds,
        wedges_per_band,
    };

    let mut sectors = Vec::with_capacity(partition.n_sectors());
    let mut sector_id = 0;
    for band in 0..n_bands {
        let w = partition.wedges_per_band[band];
        let el_lo = partition.elevation_edges[band].to_radians();
        let el_hi = partition.elevation_edges[band + 1].to_radians();
        // Stratified stage resonances, permuted across the band's wedges, so
        // neighboring sectors never cluster on one frequency pair.
        let strata = stratified_resonances(rng, w);
        for wedge in 0..w {
            let wedge_frac = 1.0 / w as f64;
            let solid_frac = (el_hi.sin() - el_lo.sin()) * wedge_frac;
            sectors.push(draw_sector(
                config,
                rng,
                sector_id,
                solid_frac,
                el_lo,
                el_hi,
                w,
                strata[wedge],
            ));
            sector_id += 1;
        }
    }

    EnclosureModel {
        config: config.clone(),
        sectors,
        partition,
        achieved_max_coherence: f64::NAN,
    }
}

struct PlacedHole {
    azimuth_rad: f64,
    elevation_rad: f64,
    radius: f64,
}

/// Primary resonance band covered by the sector draws, hertz.
const RESONANCE_LO: f64 = 450.0;
const RESONANCE_HI: f64 = 4300.0;
/// Ratio between the two stage resonances of one sector. Kept inside the
/// stage bandwidth so the cascade keeps a tall pass peak.
const STAGE_RATIO_LO: f64 = 1.02;
const STAGE_RATIO_HI: f64 = 1.12;

fn shuffle<T>(rng: &mut ChaCha8Rng, values: &mut [T]) {
    for i in (1..values.len()).rev() {
        let j = rng.random_range(0..=i);
        values.swap(i, j);
    }
}

/// Per-wedge stage resonance pairs `(f1, f2)`. Both the primary resonance
/// and the stage detuning are drawn from jittered log-spaced strata under
/// independent permutations, so no two wedges share a similar pair.
fn stratified_resonances(rng: &mut ChaCha8Rng, wedges: usize) -> Vec<(f64, f64)> {
    let stratum = |lo: f64, hi: f64, k: usize, u: f64| -> f64 {
        let step = (hi / lo).ln() / wedges as f64;
        (lo.ln() + (k as f64 + u) * step).exp()
    };
    let mut primaries: Vec<f64> = (0..wedges)
        .map(|k| stratum(RESONANCE_LO, RESONANCE_HI, k, rng.random_range(0.1..0.9)))
        .collect();
    let mut ratios: Vec<f64> = (0..wedges)
        .map(|k| stratum(STAGE_RATIO_LO, STAGE_RATIO_HI, k, rng.random_range(0.1..0.9)))
        .collect();
    shuffle(rng, &mut primaries);
    shuffle(rng, &mut ratios);
    primaries
        .into_iter()
        .zip(ratios)
        .map(|(f1, gamma)| {
            let flip: bool = rng.random();
            let ratio = if flip { 1.0 / gamma } else { gamma };
            let f2 = (f1 * ratio).clamp(150.0, 5200.0);
            (f1, f2)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn draw_sector(
    config: &EnclosureConfig,
    rng: &mut ChaCha8Rng,
    sector_id: usize,
    solid_frac: f64,
    el_lo: f64,
    el_hi: f64,
    wedges_in_band: usize,
    stage_resonances: (f64, f64),
) -> AcmParameters {
    let wedge_width_rad = 2.0 * std::f64::consts::PI / wedges_in_band as f64;
    let el_mid = (el_lo + el_hi) / 2.0;

    let mut layer_hole_area = [0.0; 3];
    let mut layer_neck_length = [0.0; 3];
    let mut fill_ratios = [0.0; 3];

    for layer in 0..3 {
        let shell_r = config.shell_radii[layer];
        let patch_area = 2.0 * std::f64::consts::PI * shell_r * shell_r * solid_frac;
        // Arc extents of the sector patch on this shell.
        let patch_w = shell_r * el_mid.cos() * wedge_width_rad;
        let patch_h = shell_r * (el_hi - el_lo);
        let (rmin, rmax_cfg) = config.hole_radius_range;
        let rmax = rmax_cfg.min(0.35 * patch_w.min(patch_h)).max(rmin);

        // Perforation is kept fairly open: draw a target fill fraction and
        // size the holes toward it, so stage quality factors stay moderate
        // and the pass region spans a usable slice of the band.
        let target_fill = log_uniform(rng, 0.5, 0.7);
        let n_holes = rng.random_range(1..=4usize);
        let nominal_radius = (target_fill * patch_area / (n_holes as f64 * std::f64::consts::PI))
            .sqrt();
        let mut placed: Vec<PlacedHole> = Vec::with_capacity(n_holes);
        for _ in 0..n_holes {
            let radius =
                (nominal_radius * rng.random_range(0.8..1.25)).clamp(rmin, rmax);
            let mut ok = None;
            for _ in 0..64 {
                // Inset the patch by the hole radius (in arc length).
                let az_margin = radius / (shell_r * el_mid.cos().max(0.05));
                let el_margin = radius / shell_r;
                let az_span = (wedge_width_rad - 2.0 * az_margin).max(0.0);
                let el_span = ((el_hi - el_lo) - 2.0 * el_margin).max(0.0);
                let az = az_margin + rng.random_range(0.0..1.0) * az_span;
                let el = el_lo + el_margin + rng.random_range(0.0..1.0) * el_span;
                let clear = placed.iter().all(|h| {
                    let daz = (az - h.azimuth_rad) * shell_r * el_mid.cos();
                    let del = (el - h.elevation_rad) * shell_r;
                    let dist = (daz * daz + del * del).sqrt();
                    dist >= radius + h.radius + config.min_hole_gap
                });
                if clear {
                    ok = Some(PlacedHole {
                        azimuth_rad: az,
                        elevation_rad: el,
                        radius,
                    });
                    break;
                }
            }
            if let Some(h) = ok {
                placed.push(h);
            }
        }
        if placed.is_empty() {
            // A single centered hole always fits after the radius cap.
            placed.push(PlacedHole {
                azimuth_rad: wedge_width_rad / 2.0,
                elevation_rad: el_mid,
                radius: rmin,
            });
        }

        let area: f64 = placed.iter().map(|h| std::f64::consts::PI * h.radius * h.radius).sum();
        let mean_radius = placed.iter().map(|h| h.radius).sum::<f64>() / placed.len() as f64;
        layer_hole_area[layer] = area;
        layer_neck_length[layer] = config.shell_thickness[layer] + 1.7 * mean_radius;
        fill_ratios[layer] = (area / patch_area).clamp(0.05, 0.8);
    }

    // Cavity volumes are the free parameter that places the two stage
    // resonances on the sector's stratified pair, giving each sector a
    // two-hump pass shape over the band rather than a flat floor.
    let mut cavity_volumes = [0.0; 2];
    for (j, f_res) in [stage_resonances.0, stage_resonances.1]
        .into_iter()
        .enumerate()
    {
        let angular = 2.0 * std::f64::consts::PI * f_res / config.speed_of_sound;
        cavity_volumes[j] =
            layer_hole_area[j] / (layer_neck_length[j] * angular * angular);
    }

    AcmParameters {
        sector_id,
        cavity_volumes,
        layer_hole_area,
        layer_neck_length,
        fill_ratios,
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> SpectralGrid {
        StftConfig::default().grid()
    }

    #[test]
    fn default_config_yields_24_sectors() {
        let model = generate_enclosure(&EnclosureConfig::default()).unwrap();
        assert_eq!(model.sectors.len(), 24);
        assert_eq!(model.partition.n_sectors(), 24);
        assert_eq!(model.partition.wedges_per_band, vec![16, 6, 2]);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = EnclosureConfig::default();
        let a = generate_enclosure(&cfg).unwrap();
        let b = generate_enclosure(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_enclosure(&EnclosureConfig::default()).unwrap();
        let b = generate_enclosure(&EnclosureConfig {
            seed: 43,
            ..EnclosureConfig::default()
        })
        .unwrap();
        assert_ne!(a.sectors, b.sectors);
    }

    #[test]
    fn probe_coherence_meets_default_target() {
        let model = generate_enclosure(&EnclosureConfig::default()).unwrap();
        let responses = model.probe_responses(&grid()).unwrap();
        let matrix = coherence_matrix(&responses).unwrap();
        let max_c = max_off_diagonal(&matrix);
        assert!(max_c <= 0.95, "max off-diagonal coherence {max_c}");
        assert!((model.achieved_max_coherence - max_c).abs() < 1e-12);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = EnclosureConfig::default();
        cfg.shell_radii = [0.1, 0.168, 0.072];
        assert!(matches!(
            generate_enclosure(&cfg),
            Err(EnclosureError::InvalidConfig { field: "shell_radii", .. })
        ));
    }

    #[test]
    fn helmholtz_resonance_reference_value() {
        // One 1 cm hole into a 1 liter cavity through a 7 mm shell.
        let area = std::f64::consts::PI * 0.01 * 0.01;
        let f = helmholtz_resonance(area, 1e-3, 0.007 + 1.7 * 0.01, 343.0);
        assert!((f - 197.5).abs() < 0.1, "got {f}");
    }

    #[test]
    fn responses_stay_within_floor_and_unity() {
        let model = generate_enclosure(&EnclosureConfig::default()).unwrap();
        let law = model.config.filter_law();
        for acm in &model.sectors {
            let r = acm_response(acm, &grid(), &law).unwrap();
            for &v in r.values() {
                assert!(v >= model.config.transmission_floor - 1e-15);
                assert!(v <= 1.0 + 1e-15);
            }
        }
    }

    #[test]
    fn identical_acm_gives_identical_response() {
        let model = generate_enclosure(&EnclosureConfig::default()).unwrap();
        let law = model.config.filter_law();
        let a = acm_response(&model.sectors[3], &grid(), &law).unwrap();
        let b = acm_response(&model.sectors[3], &grid(), &law).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn bad_geometry_rejected() {
        let mut acm = generate_enclosure(&EnclosureConfig::default())
            .unwrap()
            .sectors[0]
            .clone();
        acm.cavity_volumes[0] = 0.0;
        let law = EnclosureConfig::default().filter_law();
        assert!(matches!(
            acm_response(&acm, &grid(), &law),
            Err(EnclosureError::BadGeometry(_))
        ));
    }

    #[test]
    fn same_sector_directions_share_response_when_blending_off() {
        let model = generate_enclosure(&EnclosureConfig::default()).unwrap();
        let g = grid();
        // Two directions well inside the wedge containing azimuth 45.
        let d1 = Direction::new(44.0, 1.0, 2.5).unwrap();
        let d2 = Direction::new(46.0, 3.0, 2.5).unwrap();
        assert_eq!(
            model.partition.sector_of(d1.azimuth_deg, d1.elevation_deg),
            model.partition.sector_of(d2.azimuth_deg, d2.elevation_deg)
        );
        let r1 = model.direction_response(&d1, &g).unwrap();
        let r2 = model.direction_response(&d2, &g).unwrap();
        assert_eq!(r1.values(), r2.values());
    }

    #[test]
    fn boundary_direction_blends_evenly() {
        let mut cfg = EnclosureConfig::default();
        cfg.blend_sectors = true;
        let model = generate_enclosure(&cfg).unwrap();
        let g = grid();
        let law = model.config.filter_law();
        // Pick an interior band-0 boundary and query exactly on it.
        let b = model.partition.azimuth_bounds[0][4];
        let on_boundary = Direction::new(b, 1.0, 2.5).unwrap();
        let got = model.direction_response(&on_boundary, &g).unwrap();
        let left = acm_response(&model.sectors[4], &g, &law).unwrap();
        let right = acm_response(&model.sectors[5], &g, &law).unwrap();
        for ((g_v, l), r) in got.values().iter().zip(left.values()).zip(right.values()) {
            let expect = 0.5 * l + 0.5 * r;
            assert!((g_v - expect).abs() < 1e-12, "{g_v} vs {expect}");
        }
    }

    #[test]
    fn probe_directions_occupy_distinct_sectors() {
        let model = generate_enclosure(&EnclosureConfig::default()).unwrap();
        let mut seen = std::collections::HashSet::new();
        for d in standard_probe_directions() {
            let s = model.partition.sector_of(d.azimuth_deg, d.elevation_deg);
            assert!(seen.insert(s), "sector {s} hit twice");
        }
        assert_eq!(seen.len(), 16);
    }

    #[test]
    fn partition_is_total_over_random_directions() {
        use rand::{Rng, SeedableRng};
        let model = generate_enclosure(&EnclosureConfig::default()).unwrap();
        let n_sectors = model.partition.n_sectors();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10_000 {
            let az = rng.random_range(0.0..360.0);
            let el = rng.random_range(0.0..=90.0);
            let s = model.partition.sector_of(az, el);
            assert!(s < n_sectors, "sector {s} out of range for ({az}, {el})");
        }
    }

    #[test]
    fn coherence_reference_values() {
        let g = SpectralGrid {
            sample_rate: 16_000,
            fft_len: 1024,
            bin_lo: 7,
            bin_hi: 8,
        };
        let e1 = MagnitudeSpectrum::new(vec![1.0, 0.0], g).unwrap();
        let e2 = MagnitudeSpectrum::new(vec![0.0, 1.0], g).unwrap();
        let ones = MagnitudeSpectrum::new(vec![1.0, 1.0], g).unwrap();
        assert_eq!(coherence(&e1, &e2).unwrap(), 0.0);
        assert!((coherence(&e1, &e1).unwrap() - 1.0).abs() < 1e-12);
        let c = coherence(&ones, &e1).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9, "got {c}");
        let zero = MagnitudeSpectrum::new(vec![0.0, 0.0], g).unwrap();
        assert!(matches!(
            coherence(&zero, &e1),
            Err(EnclosureError::ZeroResponse)
        ));
    }

    #[test]
    fn coherence_matrix_is_symmetric_with_unit_diagonal() {
        let model = generate_enclosure(&EnclosureConfig::default()).unwrap();
        let responses = model.probe_responses(&grid()).unwrap();
        let m = coherence_matrix(&responses).unwrap();
        for i in 0..m.len() {
            assert!((m[i][i] - 1.0).abs() <= 1e-12);
            for j in 0..m.len() {
                assert_eq!(m[i][j], m[j][i]);
                assert!(m[i][j] >= 0.0 && m[i][j] <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn coherence_is_scale_invariant() {
        let g = SpectralGrid {
            sample_rate: 16_000,
            fft_len: 1024,
            bin_lo: 7,
            bin_hi: 10,
        };
        let x = MagnitudeSpectrum::new(vec![1.0, 2.0, 0.5, 3.0], g).unwrap();
        let y = MagnitudeSpectrum::new(vec![0.3, 1.0, 2.0, 0.1], g).unwrap();
        let base = coherence(&x, &y).unwrap();
        for alpha in [0.25, 2.0, 117.0] {
            let scaled =
                MagnitudeSpectrum::new(x.values().iter().map(|v| v * alpha).collect(), g).unwrap();
            let c = coherence(&scaled, &y).unwrap();
            assert!((c - base).abs() < 1e-12);
        }
    }

    #[test]
    fn model_round_trips_through_json() {
        let model = generate_enclosure(&EnclosureConfig::default()).unwrap();
        let json = model.to_json();
        let back = EnclosureModel::from_json(&json).unwrap();
        assert_eq!(model, back);
    }
}
