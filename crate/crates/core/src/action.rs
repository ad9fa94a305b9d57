//! Discrete action space: 5 fluid bins x 6 vasopressor (VIS) bins.
//!
//! Bins are left-open / right-closed. Fluid bin 1 is the closed interval
//! `[0, c1]`, so zero fluid shares the lowest bin; vasopressor bin 1 holds
//! exactly `vis == 0`. Action ids are vaso-major:
//! `id = (vaso_bin - 1) * 5 + (fluid_bin - 1)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_FLUID_BINS: usize = 5;
pub const N_VASO_BINS: usize = 6;
pub const N_ACTIONS: usize = N_FLUID_BINS * N_VASO_BINS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(u8);

impl ActionId {
    /// Zero vasopressors, lowest fluid bin.
    pub const NO_INTERVENTION: ActionId = ActionId(0);

    pub fn new(id: usize) -> Result<Self> {
        if id < N_ACTIONS {
            Ok(ActionId(id as u8))
        } else {
            Err(Error::InvalidArgument(format!(
                "action id {id} outside [0, {N_ACTIONS})"
            )))
        }
    }

    /// Bins are 1-based, as printed in the cutoff table.
    pub fn from_bins(fluid_bin: usize, vaso_bin: usize) -> Result<Self> {
        if !(1..=N_FLUID_BINS).contains(&fluid_bin) || !(1..=N_VASO_BINS).contains(&vaso_bin) {
            return Err(Error::InvalidArgument(format!(
                "bins ({fluid_bin}, {vaso_bin}) out of range"
            )));
        }
        Ok(ActionId(((vaso_bin - 1) * N_FLUID_BINS + (fluid_bin - 1)) as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn fluid_bin(self) -> usize {
        self.index() % N_FLUID_BINS + 1
    }

    pub fn vaso_bin(self) -> usize {
        self.index() / N_FLUID_BINS + 1
    }

    pub fn all() -> impl Iterator<Item = ActionId> {
        (0..N_ACTIONS).map(|i| ActionId(i as u8))
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.fluid_bin(), self.vaso_bin())
    }
}

/// Decomposes a raw id into `(fluid_bin, vaso_bin)`.
pub fn action_components(id: usize) -> Result<(usize, usize)> {
    let a = ActionId::new(id)?;
    Ok((a.fluid_bin(), a.vaso_bin()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct ActionGrid {
    fluid_cutoffs: [f64; N_FLUID_BINS - 1],
    vis_cutoffs: [f64; N_VASO_BINS - 1],
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    fluid_cutoffs: Vec<f64>,
    vis_cutoffs: Vec<f64>,
}

impl TryFrom<RawGrid> for ActionGrid {
    type Error = Error;
    fn try_from(raw: RawGrid) -> Result<Self> {
        let fluid: [f64; 4] = raw.fluid_cutoffs.try_into().map_err(|v: Vec<f64>| {
            Error::InvalidArgument(format!("fluid_cutoffs needs 4 values, got {}", v.len()))
        })?;
        let vis: [f64; 5] = raw.vis_cutoffs.try_into().map_err(|v: Vec<f64>| {
            Error::InvalidArgument(format!("vis_cutoffs needs 5 values, got {}", v.len()))
        })?;
        ActionGrid::new(fluid, vis)
    }
}

impl From<ActionGrid> for RawGrid {
    fn from(g: ActionGrid) -> Self {
        RawGrid {
            fluid_cutoffs: g.fluid_cutoffs.to_vec(),
            vis_cutoffs: g.vis_cutoffs.to_vec(),
        }
    }
}

fn strictly_ascending(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite()) && xs.windows(2).all(|w| w[0] < w[1])
}

impl ActionGrid {
    pub fn new(fluid_cutoffs: [f64; 4], vis_cutoffs: [f64; 5]) -> Result<Self> {
        if !strictly_ascending(&fluid_cutoffs) || fluid_cutoffs[0] < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "fluid cutoffs must be nonnegative and strictly ascending: {fluid_cutoffs:?}"
            )));
        }
        if !strictly_ascending(&vis_cutoffs) || vis_cutoffs[0] != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "vis cutoffs must start at 0 and be strictly ascending: {vis_cutoffs:?}"
            )));
        }
        Ok(ActionGrid {
            fluid_cutoffs,
            vis_cutoffs,
        })
    }

    /// The published cutoff table: fluids 100/270/500/960 mL, VIS 0/3/6/10/20.
    pub fn reference() -> Self {
        ActionGrid {
            fluid_cutoffs: [100.0, 270.0, 500.0, 960.0],
            vis_cutoffs: [0.0, 3.0, 6.0, 10.0, 20.0],
        }
    }

    pub fn fluid_cutoffs(&self) -> &[f64; 4] {
        &self.fluid_cutoffs
    }

    pub fn vis_cutoffs(&self) -> &[f64; 5] {
        &self.vis_cutoffs
    }

    pub fn fluid_bin(&self, fluid_ml: f64) -> usize {
        1 + self.fluid_cutoffs.iter().filter(|&&c| fluid_ml > c).count()
    }

    pub fn vaso_bin(&self, vis: f64) -> usize {
        if vis == 0.0 {
            1
        } else {
            2 + self.vis_cutoffs[1..].iter().filter(|&&c| vis > c).count()
        }
    }

    /// Maps a dose pair to its action id.
    pub fn discretize(&self, fluid_ml: f64, vis: f64) -> Result<ActionId> {
        if !(fluid_ml >= 0.0) || !(vis >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "doses must be nonnegative, got fluid {fluid_ml}, vis {vis}"
            )));
        }
        ActionId::from_bins(self.fluid_bin(fluid_ml), self.vaso_bin(vis))
    }

    /// A dose pair that discretizes back to `action`: bin midpoints, with the
    /// open-ended top bins at 1.5x their lower cutoff.
    pub fn representative_doses(&self, action: ActionId) -> (f64, f64) {
        let f = action.fluid_bin();
        let fluid = match f {
            1 => self.fluid_cutoffs[0] / 2.0,
            N_FLUID_BINS => self.fluid_cutoffs[3] * 1.5,
            _ => (self.fluid_cutoffs[f - 2] + self.fluid_cutoffs[f - 1]) / 2.0,
        };
        let v = action.vaso_bin();
        let vis = match v {
            1 => 0.0,
            N_VASO_BINS => self.vis_cutoffs[4] * 1.5,
            _ => (self.vis_cutoffs[v - 2] + self.vis_cutoffs[v - 1]) / 2.0,
        };
        (fluid, vis)
    }
}

/// Nearest-rank percentile (`p` in (0, 100]) of an ascending-sorted sample.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

fn quintile_cutoffs(mut values: Vec<f64>, what: &str) -> Result<[f64; 4]> {
    values.sort_by(f64::total_cmp);
    let mut distinct = values.clone();
    distinct.dedup();
    if distinct.len() < 5 {
        return Err(Error::InvalidData(format!(
            "need at least 5 distinct nonzero {what} values, found {}",
            distinct.len()
        )));
    }
    let cuts = [20.0, 40.0, 60.0, 80.0].map(|p| nearest_rank(&values, p));
    if !strictly_ascending(&cuts) {
        return Err(Error::InvalidData(format!(
            "{what} quintile cutoffs are not strictly ascending: {cuts:?}"
        )));
    }
    Ok(cuts)
}

/// Fits quintile cutoffs on the nonzero doses of each drug class.
pub fn fit_action_grid(doses: &[(f64, f64)]) -> Result<ActionGrid> {
    if doses.iter().any(|&(f, v)| !(f >= 0.0) || !(v >= 0.0)) {
        return Err(Error::InvalidData("negative or NaN dose".into()));
    }
    let fluid: Vec<f64> = doses.iter().map(|d| d.0).filter(|&f| f > 0.0).collect();
    let vis: Vec<f64> = doses.iter().map(|d| d.1).filter(|&v| v > 0.0).collect();
    let fc = quintile_cutoffs(fluid, "fluid")?;
    let vc = quintile_cutoffs(vis, "VIS")?;
    ActionGrid::new(fc, [0.0, vc[0], vc[1], vc[2], vc[3]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_boundaries() {
        let g = ActionGrid::reference();
        let a = g.discretize(300.0, 0.0).unwrap();
        assert_eq!((a.fluid_bin(), a.vaso_bin(), a.index()), (3, 1, 2));
        let a = g.discretize(0.0, 0.0).unwrap();
        assert_eq!((a.fluid_bin(), a.vaso_bin(), a.index()), (1, 1, 0));
        let a = g.discretize(100.0, 3.0).unwrap();
        assert_eq!((a.fluid_bin(), a.vaso_bin()), (1, 2));
        let a = g.discretize(100.0000001, 3.0000001).unwrap();
        assert_eq!((a.fluid_bin(), a.vaso_bin()), (2, 3));
        assert!(g.discretize(-1.0, 0.0).is_err());
    }

    #[test]
    fn components_round_trip() {
        assert_eq!(action_components(0).unwrap(), (1, 1));
        assert_eq!(action_components(29).unwrap(), (5, 6));
        assert!(action_components(30).is_err());
        for id in 0..N_ACTIONS {
            let (f, v) = action_components(id).unwrap();
            assert_eq!(ActionId::from_bins(f, v).unwrap().index(), id);
        }
    }

    #[test]
    fn fit_uniform_vis() {
        let doses: Vec<(f64, f64)> = (1..=100).map(|i| (i as f64 * 10.0, i as f64)).collect();
        let g = fit_action_grid(&doses).unwrap();
        assert_eq!(g.vis_cutoffs(), &[0.0, 20.0, 40.0, 60.0, 80.0]);
        assert_eq!(g.fluid_cutoffs(), &[200.0, 400.0, 600.0, 800.0]);
    }

    #[test]
    fn fit_rejects_all_zero_vis() {
        let doses: Vec<(f64, f64)> = (1..=100).map(|i| (i as f64, 0.0)).collect();
        assert!(fit_action_grid(&doses).is_err());
    }

    #[test]
    fn fit_gives_equal_nonzero_bins() {
        let doses: Vec<(f64, f64)> = (0..500)
            .map(|i| ((i * 37 % 1000) as f64, if i % 3 == 0 { 0.0 } else { (i % 97) as f64 + 0.5 }))
            .collect();
        let g = fit_action_grid(&doses).unwrap();
        let mut vaso = [0usize; 6];
        let mut fluid = [0usize; 5];
        for &(f, v) in &doses {
            if v > 0.0 {
                vaso[g.vaso_bin(v) - 1] += 1;
            }
            if f > 0.0 {
                fluid[g.fluid_bin(f) - 1] += 1;
            }
        }
        let nz_v: usize = vaso[1..].iter().sum();
        for c in &vaso[1..] {
            assert!((*c as f64 - nz_v as f64 / 5.0).abs() <= 6.0, "{vaso:?}");
        }
        let nz_f: usize = fluid.iter().sum();
        for c in &fluid {
            assert!((*c as f64 - nz_f as f64 / 5.0).abs() <= 2.0, "{fluid:?}");
        }
    }

    #[test]
    fn representative_doses_round_trip() {
        let g = ActionGrid::reference();
        for a in ActionId::all() {
            let (f, v) = g.representative_doses(a);
            assert_eq!(g.discretize(f, v).unwrap(), a);
        }
    }

    #[test]
    fn grid_json_shape() {
        let json = serde_json::to_string(&ActionGrid::reference()).unwrap();
        assert_eq!(
            json,
            r#"{"fluid_cutoffs":[100.0,270.0,500.0,960.0],"vis_cutoffs":[0.0,3.0,6.0,10.0,20.0]}"#
        );
        let back: ActionGrid = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ActionGrid::reference());
        assert!(serde_json::from_str::<ActionGrid>(
            r#"{"fluid_cutoffs":[1,1,2,3],"vis_cutoffs":[0,1,2,3,4]}"#
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn monotone_in_each_dose(f in 0.0f64..3000.0, df in 0.0f64..500.0, v in 0.0f64..50.0, dv in 0.0f64..10.0) {
            let g = ActionGrid::reference();
            let a = g.discretize(f, v).unwrap();
            let b = g.discretize(f + df, v + dv).unwrap();
            prop_assert!(b.fluid_bin() >= a.fluid_bin());
            prop_assert!(b.vaso_bin() >= a.vaso_bin());
        }
    }
}
