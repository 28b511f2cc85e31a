use super::{CrystalError, IonCrystal};
use crate::constants::TWO_PI;
use crate::geometry::TrapModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpacingStats {
    pub count: usize,
    /// m.
    pub mean: f64,
    /// Population standard deviation, m.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl SpacingStats {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self {
                count: 0,
                mean: f64::NAN,
                std: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
            };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self {
            count: v.len(),
            mean,
            std: var.sqrt(),
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn relative_std(&self) -> f64 {
        self.std / self.mean
    }
}

/// Arc distance between azimuthally consecutive ions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IonSpacing {
    /// Ion indices in the crystal, ordered counterclockwise.
    pub from: usize,
    pub to: usize,
    /// Azimuths of the two ions, rad in [0, 2 pi).
    pub start: f64,
    pub end: f64,
    /// Arc length on the fitted circle, m.
    pub spacing: f64,
    /// 1..=8, counted counterclockwise from azimuth 0.
    pub octant: usize,
}

impl IonSpacing {
    /// Azimuth halfway between the two ions, rad in [0, 2 pi).
    pub fn midpoint(&self) -> f64 {
        let mut span = self.end - self.start;
        if span < 0.0 {
            span += TWO_PI;
        }
        (self.start + 0.5 * span).rem_euclid(TWO_PI)
    }

    /// True if `azimuth` lies on the arc from `start` to `end`.
    pub fn covers(&self, azimuth: f64) -> bool {
        let a = (azimuth - self.start).rem_euclid(TWO_PI);
        let span = (self.end - self.start).rem_euclid(TWO_PI);
        a <= span
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpacingReport {
    pub spacings: Vec<IonSpacing>,
    /// Mean cylindrical radius of the ions, m.
    pub radius: f64,
    pub stats: SpacingStats,
    pub octants: [SpacingStats; 8],
}

fn octant_of(azimuth: f64) -> usize {
    ((azimuth.rem_euclid(TWO_PI) / (TWO_PI / 8.0)).floor() as usize).min(7) + 1
}

impl SpacingReport {
    /// Statistics over spacings whose midpoint lies outside every excluded
    /// arc `(center, half_width)` (rad).
    pub fn stats_excluding_arcs(&self, arcs: &[(f64, f64)]) -> SpacingStats {
        SpacingStats::from_values(
            self.spacings
                .iter()
                .filter(|s| {
                    let m = s.midpoint();
                    arcs.iter().all(|&(c, hw)| {
                        let d = (m - c + 0.5 * TWO_PI).rem_euclid(TWO_PI) - 0.5 * TWO_PI;
                        d.abs() > hw
                    })
                })
                .map(|s| s.spacing),
        )
    }

    /// Statistics excluding the arcs within `pitches` site pitches of the
    /// named sites.
    pub fn stats_excluding_sites(
        &self,
        model: &TrapModel<f64>,
        labels: &[String],
        pitches: f64,
    ) -> Result<SpacingStats, CrystalError> {
        let hw = pitches * model.site_pitch();
        let mut arcs = Vec::new();
        for l in labels {
            let s = model
                .site(l)
                .ok_or_else(|| CrystalError::Invalid(format!("unknown site {l}")))?;
            arcs.push((s.azimuth, hw));
        }
        Ok(self.stats_excluding_arcs(&arcs))
    }

    /// The spacing whose arc contains `azimuth`.
    pub fn spacing_at(&self, azimuth: f64) -> Option<&IonSpacing> {
        self.spacings.iter().find(|s| s.covers(azimuth))
    }
}

/// Spacing statistics of a converged crystal.
pub fn spacing_report(crystal: &IonCrystal) -> Result<SpacingReport, CrystalError> {
    if !crystal.converged {
        return Err(CrystalError::NotConverged {
            max_force: crystal.max_force,
        });
    }
    spacing_report_positions(&crystal.positions)
}

/// Spacing statistics of arbitrary ion positions (at least two ions).
pub fn spacing_report_positions(positions: &[[f64; 3]]) -> Result<SpacingReport, CrystalError> {
    let n = positions.len();
    if n < 2 {
        return Err(CrystalError::Invalid(
            "spacing needs at least two ions".into(),
        ));
    }
    let radius = positions.iter().map(|p| p[0].hypot(p[1])).sum::<f64>() / n as f64;
    let mut order: Vec<(f64, usize)> = positions
        .iter()
        .enumerate()
        .map(|(i, p)| (p[1].atan2(p[0]).rem_euclid(TWO_PI), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let spacings: Vec<IonSpacing> = (0..n)
        .map(|k| {
            let (a0, i0) = order[k];
            let (a1, i1) = order[(k + 1) % n];
            let span = (a1 - a0).rem_euclid(TWO_PI);
            let mut s = IonSpacing {
                from: i0,
                to: i1,
                start: a0,
                end: a1,
                spacing: radius * span,
                octant: 0,
            };
            s.octant = octant_of(s.midpoint());
            s
        })
        .collect();
    let stats = SpacingStats::from_values(spacings.iter().map(|s| s.spacing));
    let octants = std::array::from_fn(|o| {
        SpacingStats::from_values(
            spacings
                .iter()
                .filter(|s| s.octant == o + 1)
                .map(|s| s.spacing),
        )
    });
    Ok(SpacingReport {
        spacings,
        radius,
        stats,
        octants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_ring_statistics() {
        let n = 16;
        let r = 600e-6;
        let pos: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                let t = TWO_PI * (i as f64 + 0.5) / n as f64;
                [r * t.cos(), r * t.sin(), 8e-5]
            })
            .collect();
        let rep = spacing_report_positions(&pos).unwrap();
        assert!((rep.stats.mean * n as f64 - TWO_PI * r).abs() < 1e-12);
        assert!(rep.stats.relative_std() < 1e-12);
        assert!(rep.octants.iter().all(|o| o.count == 2));
        let gap = rep.spacing_at(0.0).unwrap();
        assert_eq!((gap.from, gap.to), (n - 1, 0));
    }

    #[test]
    fn unconverged_crystal_is_rejected() {
        let c = IonCrystal {
            n: 2,
            positions: vec![[1e-4, 0.0, 1e-4], [-1e-4, 0.0, 1e-4]],
            energy: 0.0,
            max_force: 1.0,
            converged: false,
            iterations: 0,
            energy_history: vec![],
            diagnostic: None,
        };
        assert!(matches!(
            spacing_report(&c),
            Err(CrystalError::NotConverged { .. })
        ));
    }
}
