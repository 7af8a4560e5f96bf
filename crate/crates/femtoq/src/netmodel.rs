//! Radio environment: topology placement, path-loss channel gains, and
//! Shannon capacities for a macrocell underlaid with femtocells.
//!
//! One macro base station (MBS) serves one macro user; each femto base
//! station (FBS) serves one closed-access femto user. All cells transmit
//! on the same `K` orthogonal subcarriers, so the only coupling between
//! cells is co-channel interference. Gains follow a pure path-loss model
//! `h = d^(-PL)` and are therefore identical across subcarriers; they are
//! still stored per subcarrier so a frequency-selective extension is a
//! drop-in.

use crate::error::{Error, Result};
use rand::Rng;

/// Retry budget for rejection sampling a single femtocell placement.
const PLACEMENT_RETRY_CAP: u32 = 10_000;

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

/// 2-D position in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Euclidean distance to `other`.
    pub fn dist(&self, other: &Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Uniform sample inside the disc of radius `radius` around `center`.
fn uniform_in_disc<R: Rng>(center: Point, radius: f64, rng: &mut R) -> Point {
    let r = radius * rng.gen::<f64>().sqrt();
    let theta = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
    Point::new(center.x + r * theta.cos(), center.y + r * theta.sin())
}

/// Maximum transmitter-receiver distances for topology placement, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacementBounds {
    /// MBS to its associated macro user.
    pub mbs_to_macro_user: f64,
    /// MBS to any femto user.
    pub mbs_to_femto_user: f64,
    /// FBS to its own user.
    pub fbs_to_own_user: f64,
    /// FBS to another femtocell's user.
    pub fbs_to_foreign_user: f64,
    /// FBS to the macro user.
    pub fbs_to_macro_user: f64,
}

impl Default for PlacementBounds {
    fn default() -> Self {
        Self {
            mbs_to_macro_user: 1000.0,
            mbs_to_femto_user: 800.0,
            fbs_to_own_user: 80.0,
            fbs_to_foreign_user: 300.0,
            fbs_to_macro_user: 800.0,
        }
    }
}

impl PlacementBounds {
    fn validate(&self) -> Result<()> {
        let all = [
            self.mbs_to_macro_user,
            self.mbs_to_femto_user,
            self.fbs_to_own_user,
            self.fbs_to_foreign_user,
            self.fbs_to_macro_user,
        ];
        if all.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::Config("all placement bounds must be > 0".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

/// Positions of every station and user; the sole source of channel gains.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    pub mbs_position: Point,
    pub macro_user_position: Point,
    pub fbs_positions: Vec<Point>,
    pub femto_user_positions: Vec<Point>,
    pub path_loss_exponent: f64,
}

impl NetworkTopology {
    pub fn n_femto(&self) -> usize {
        self.fbs_positions.len()
    }

    /// Append one femtocell placed by rejection sampling under `bounds`,
    /// leaving every existing position untouched.
    pub fn add_femtocell<R: Rng>(&mut self, bounds: &PlacementBounds, rng: &mut R) -> Result<()> {
        bounds.validate()?;
        for _ in 0..PLACEMENT_RETRY_CAP {
            let fbs = uniform_in_disc(self.mbs_position, bounds.mbs_to_macro_user, rng);
            let user = uniform_in_disc(fbs, bounds.fbs_to_own_user, rng);

            if fbs.dist(&self.macro_user_position) > bounds.fbs_to_macro_user {
                continue;
            }
            if self.mbs_position.dist(&user) > bounds.mbs_to_femto_user {
                continue;
            }
            let cross_ok = (0..self.n_femto()).all(|j| {
                fbs.dist(&self.femto_user_positions[j]) <= bounds.fbs_to_foreign_user
                    && self.fbs_positions[j].dist(&user) <= bounds.fbs_to_foreign_user
            });
            if !cross_ok {
                continue;
            }
            // Degenerate zero distances would blow up d^(-PL).
            let positive = fbs.dist(&user) > 0.0
                && fbs.dist(&self.macro_user_position) > 0.0
                && self.mbs_position.dist(&user) > 0.0
                && (0..self.n_femto()).all(|j| {
                    fbs.dist(&self.femto_user_positions[j]) > 0.0
                        && self.fbs_positions[j].dist(&user) > 0.0
                });
            if !positive {
                continue;
            }

            self.fbs_positions.push(fbs);
            self.femto_user_positions.push(user);
            return Ok(());
        }
        Err(Error::TopologyInfeasible {
            retries: PLACEMENT_RETRY_CAP,
        })
    }
}

/// Draw a random topology satisfying all five distance constraints.
///
/// The MBS sits at the origin, the macro user uniformly in its disc, and
/// femtocells are added one at a time so a later deployment never moves an
/// already placed cell. Deterministic for a fixed RNG state.
pub fn place_network<R: Rng>(
    bounds: &PlacementBounds,
    n_femto: usize,
    pl_exponent: f64,
    rng: &mut R,
) -> Result<NetworkTopology> {
    bounds.validate()?;
    let mbs = Point::new(0.0, 0.0);
    let macro_user = loop {
        let p = uniform_in_disc(mbs, bounds.mbs_to_macro_user, rng);
        if mbs.dist(&p) > 0.0 {
            break p;
        }
    };
    let mut topo = NetworkTopology {
        mbs_position: mbs,
        macro_user_position: macro_user,
        fbs_positions: Vec::with_capacity(n_femto),
        femto_user_positions: Vec::with_capacity(n_femto),
        path_loss_exponent: pl_exponent,
    };
    for _ in 0..n_femto {
        topo.add_femtocell(bounds, rng)?;
    }
    Ok(topo)
}

// ---------------------------------------------------------------------------
// Channel gains
// ---------------------------------------------------------------------------

/// Path-loss gain `d^(-pl_exponent)` for a link of length `distance` meters.
pub fn channel_gain(distance: f64, pl_exponent: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::Domain(format!(
            "channel gain needs distance > 0, got {distance}"
        )));
    }
    Ok(distance.powf(-pl_exponent))
}

/// Per-subcarrier channel gains for every interfering link in the network.
///
/// Indexing convention: `n` ranges over femtocells, `k` over subcarriers.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGains {
    /// MBS to macro user, `h_oo[k]`.
    mbs_to_macro_user: Vec<f64>,
    /// FBS `n` to macro user, `h_no[n][k]`.
    fbs_to_macro_user: Vec<Vec<f64>>,
    /// MBS to the user of femto `n`, `h_on[n][k]`.
    mbs_to_femto_user: Vec<Vec<f64>>,
    /// FBS `tx` to the user of femto `rx`, `[tx][rx][k]`; the diagonal is
    /// each femtocell's own link.
    fbs_to_femto_user: Vec<Vec<Vec<f64>>>,
    subcarriers: usize,
}

impl ChannelGains {
    /// Compute all gains from a topology, replicated across `subcarriers`.
    pub fn from_topology(topo: &NetworkTopology, subcarriers: usize) -> Result<Self> {
        if subcarriers == 0 {
            return Err(Error::Config("subcarrier count must be >= 1".into()));
        }
        let pl = topo.path_loss_exponent;
        let n = topo.n_femto();
        let flat = |d: f64| -> Result<Vec<f64>> { Ok(vec![channel_gain(d, pl)?; subcarriers]) };

        let mbs_to_macro_user = flat(topo.mbs_position.dist(&topo.macro_user_position))?;
        let mut fbs_to_macro_user = Vec::with_capacity(n);
        let mut mbs_to_femto_user = Vec::with_capacity(n);
        let mut fbs_to_femto_user = Vec::with_capacity(n);
        for tx in 0..n {
            fbs_to_macro_user
                .push(flat(topo.fbs_positions[tx].dist(&topo.macro_user_position))?);
            mbs_to_femto_user
                .push(flat(topo.mbs_position.dist(&topo.femto_user_positions[tx]))?);
            let mut row = Vec::with_capacity(n);
            for rx in 0..n {
                row.push(flat(
                    topo.fbs_positions[tx].dist(&topo.femto_user_positions[rx]),
                )?);
            }
            fbs_to_femto_user.push(row);
        }
        Ok(Self {
            mbs_to_macro_user,
            fbs_to_macro_user,
            mbs_to_femto_user,
            fbs_to_femto_user,
            subcarriers,
        })
    }

    /// Build gains directly from raw per-link values. Intended for
    /// synthetic instances (e.g. interference-free topologies) where the
    /// gains do not come from distances.
    pub fn from_parts(
        mbs_to_macro_user: Vec<f64>,
        fbs_to_macro_user: Vec<Vec<f64>>,
        mbs_to_femto_user: Vec<Vec<f64>>,
        fbs_to_femto_user: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let k = mbs_to_macro_user.len();
        if k == 0 {
            return Err(Error::Config("subcarrier count must be >= 1".into()));
        }
        let n = fbs_to_macro_user.len();
        let shape_ok = mbs_to_femto_user.len() == n
            && fbs_to_femto_user.len() == n
            && fbs_to_macro_user.iter().all(|v| v.len() == k)
            && mbs_to_femto_user.iter().all(|v| v.len() == k)
            && fbs_to_femto_user
                .iter()
                .all(|row| row.len() == n && row.iter().all(|v| v.len() == k));
        if !shape_ok {
            return Err(Error::Config("channel gain arrays have mismatched shapes".into()));
        }
        Ok(Self {
            mbs_to_macro_user,
            fbs_to_macro_user,
            mbs_to_femto_user,
            fbs_to_femto_user,
            subcarriers: k,
        })
    }

    pub fn n_femto(&self) -> usize {
        self.fbs_to_macro_user.len()
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    /// Gain MBS -> macro user on subcarrier `k`.
    pub fn h_oo(&self, k: usize) -> f64 {
        self.mbs_to_macro_user[k]
    }

    /// Gain FBS `n` -> macro user.
    pub fn h_no(&self, n: usize, k: usize) -> f64 {
        self.fbs_to_macro_user[n][k]
    }

    /// Gain MBS -> user of femto `n`.
    pub fn h_on(&self, n: usize, k: usize) -> f64 {
        self.mbs_to_femto_user[n][k]
    }

    /// Gain FBS `n` -> its own user.
    pub fn h_nn(&self, n: usize, k: usize) -> f64 {
        self.fbs_to_femto_user[n][n][k]
    }

    /// Gain FBS `tx` -> user of femto `rx`.
    pub fn h_cross(&self, tx: usize, rx: usize, k: usize) -> f64 {
        self.fbs_to_femto_user[tx][rx][k]
    }
}

// ---------------------------------------------------------------------------
// Power
// ---------------------------------------------------------------------------

/// Linear power in watts for a dBm level.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// dBm level for a linear power in watts; requires `watts > 0`.
pub fn watts_to_dbm(watts: f64) -> Result<f64> {
    if !(watts > 0.0) {
        return Err(Error::Domain(format!(
            "dBm undefined for non-positive power {watts} W"
        )));
    }
    Ok(10.0 * watts.log10() + 30.0)
}

/// Per-(transmitter, subcarrier) transmit powers in watts: the joint action
/// of the whole system.
///
/// Femto totals may exceed the femto budget; the learning state machine has
/// a dedicated level for that, so the overshoot must be representable.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    macro_w: Vec<f64>,
    femto_w: Vec<Vec<f64>>,
}

impl PowerAllocation {
    /// Build from explicit per-subcarrier powers. All entries must be
    /// finite and non-negative and femto rows must match the macro row's
    /// subcarrier count.
    pub fn new(macro_w: Vec<f64>, femto_w: Vec<Vec<f64>>) -> Result<Self> {
        let k = macro_w.len();
        if k == 0 {
            return Err(Error::Config("power allocation needs >= 1 subcarrier".into()));
        }
        let ok = macro_w.iter().all(|p| p.is_finite() && *p >= 0.0)
            && femto_w
                .iter()
                .all(|row| row.len() == k && row.iter().all(|p| p.is_finite() && *p >= 0.0));
        if !ok {
            return Err(Error::Config(
                "power allocation entries must be finite, non-negative, and shape-consistent"
                    .into(),
            ));
        }
        Ok(Self { macro_w, femto_w })
    }

    /// Macro policy: the full macro budget split equally across subcarriers
    /// in the linear domain.
    pub fn equal_split_macro(p_max_macro_dbm: f64, subcarriers: usize) -> Vec<f64> {
        let total = dbm_to_watts(p_max_macro_dbm);
        vec![total / subcarriers as f64; subcarriers]
    }

    pub fn n_femto(&self) -> usize {
        self.femto_w.len()
    }

    pub fn subcarriers(&self) -> usize {
        self.macro_w.len()
    }

    pub fn macro_power(&self, k: usize) -> f64 {
        self.macro_w[k]
    }

    pub fn femto_power(&self, n: usize, k: usize) -> f64 {
        self.femto_w[n][k]
    }

    pub fn set_femto_power(&mut self, n: usize, k: usize, watts: f64) {
        assert!(watts.is_finite() && watts >= 0.0, "power must be finite and >= 0");
        self.femto_w[n][k] = watts;
    }

    /// Append a femtocell transmitting `row` (one power per subcarrier).
    pub fn add_femto_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.subcarriers()
            || row.iter().any(|p| !p.is_finite() || *p < 0.0)
        {
            return Err(Error::Config("femto power row has wrong shape or sign".into()));
        }
        self.femto_w.push(row);
        Ok(())
    }

    pub fn macro_total_w(&self) -> f64 {
        self.macro_w.iter().sum()
    }

    /// Total transmit power of femto `n` across subcarriers, in watts.
    pub fn femto_total_w(&self, n: usize) -> f64 {
        self.femto_w[n].iter().sum()
    }
}

// ---------------------------------------------------------------------------
// Capacities
// ---------------------------------------------------------------------------

/// Shannon capacity of the macro link on subcarrier `k`, in bits/s/Hz:
/// `log2(1 + h_oo p_o / (sum_n h_no p_n + noise))`.
pub fn macro_capacity(
    k: usize,
    gains: &ChannelGains,
    alloc: &PowerAllocation,
    noise: f64,
) -> f64 {
    assert!(noise > 0.0, "noise power must be > 0");
    let mut interference = 0.0;
    for n in 0..gains.n_femto() {
        interference += gains.h_no(n, k) * alloc.femto_power(n, k);
    }
    let sinr = gains.h_oo(k) * alloc.macro_power(k) / (interference + noise);
    (1.0 + sinr).log2()
}

/// Shannon capacity of femto `n` on subcarrier `k`, in bits/s/Hz. The
/// interference sum runs over all other femtocells plus the MBS.
pub fn femto_capacity(
    n: usize,
    k: usize,
    gains: &ChannelGains,
    alloc: &PowerAllocation,
    noise: f64,
) -> f64 {
    assert!(noise > 0.0, "noise power must be > 0");
    let mut interference = 0.0;
    for tx in 0..gains.n_femto() {
        if tx != n {
            interference += gains.h_cross(tx, n, k) * alloc.femto_power(tx, k);
        }
    }
    interference += gains.h_on(n, k) * alloc.macro_power(k);
    let sinr = gains.h_nn(n, k) * alloc.femto_power(n, k) / (interference + noise);
    (1.0 + sinr).log2()
}

/// All per-subcarrier capacities plus their aggregates, in bits/s/Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityReport {
    /// `C_o^(k)` per subcarrier.
    pub macro_capacity: Vec<f64>,
    /// `C_n^(k)` per femto, per subcarrier.
    pub femto_capacity: Vec<Vec<f64>>,
    /// `C_o = sum_k C_o^(k)`.
    pub macro_aggregate: f64,
    /// `C_n = sum_k C_n^(k)` per femto.
    pub femto_aggregate: Vec<f64>,
    /// `C_femto = sum_n C_n`.
    pub total_femto: f64,
}

/// Evaluate every capacity for a joint allocation. Aggregates are exact
/// sums of the per-subcarrier entries in fixed ascending-index order.
pub fn evaluate(
    gains: &ChannelGains,
    alloc: &PowerAllocation,
    noise: f64,
) -> Result<CapacityReport> {
    if alloc.subcarriers() != gains.subcarriers() || alloc.n_femto() != gains.n_femto() {
        return Err(Error::Config(format!(
            "allocation shape ({} femto x {} subcarriers) does not match gains ({} x {})",
            alloc.n_femto(),
            alloc.subcarriers(),
            gains.n_femto(),
            gains.subcarriers()
        )));
    }
    let kk = gains.subcarriers();
    let nn = gains.n_femto();

    let macro_cap: Vec<f64> = (0..kk).map(|k| macro_capacity(k, gains, alloc, noise)).collect();
    let femto_cap: Vec<Vec<f64>> = (0..nn)
        .map(|n| (0..kk).map(|k| femto_capacity(n, k, gains, alloc, noise)).collect())
        .collect();

    let macro_aggregate = macro_cap.iter().sum();
    let femto_aggregate: Vec<f64> = femto_cap.iter().map(|row| row.iter().sum()).collect();
    let total_femto = femto_aggregate.iter().sum();

    Ok(CapacityReport {
        macro_capacity: macro_cap,
        femto_capacity: femto_cap,
        macro_aggregate,
        femto_aggregate,
        total_femto,
    })
}
