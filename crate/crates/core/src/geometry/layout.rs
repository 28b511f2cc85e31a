use super::{
    Electrode, ElectrodeRole, GeometryError, IonSpecies, LoadingHole, Polygon, RfDrive, RingSite,
    TrapModel,
};
use crate::constants::MICRO;
use crate::scalar::Real;

/// Parameters of the ring electrode layout. Lengths in meters.
///
/// The rf rails are centered on `ring_radius` with `rf_rail_separation`
/// measured edge to edge. Radially, from the center outward: inner ground
/// disk, inner control ring (`n_segments` sectors), inner rf rail, central
/// control electrode, outer rf rail, outer control ring, outer ground plane,
/// all separated by `gap_width`.
#[derive(Debug, Clone, PartialEq)]
pub struct RingLayoutParams<T: Real> {
    pub ring_radius: T,
    pub n_segments: usize,
    pub rf_rail_width: T,
    pub rf_rail_separation: T,
    pub gap_width: T,
    pub loading_hole_diameter: T,
    pub loading_hole: bool,
    pub inner_control_width: T,
    pub outer_control_width: T,
    /// Arc vertices per degree.
    pub arc_resolution: T,
    /// Ids of electrodes wired as shorted (held at 0 V).
    pub shorted: Vec<String>,
    pub rf_drive: RfDrive<T>,
    pub species: IonSpecies<T>,
}

/// Largest chord sagitta allowed by the default arc resolution.
pub const DEFAULT_SAGITTA: f64 = 0.1 * MICRO;

impl<T: Real> Default for RingLayoutParams<T> {
    fn default() -> Self {
        let mut p = Self {
            ring_radius: T::lit(625.0 * MICRO),
            n_segments: 44,
            rf_rail_width: T::lit(60.0 * MICRO),
            rf_rail_separation: T::lit(134.0 * MICRO),
            gap_width: T::lit(7.0 * MICRO),
            loading_hole_diameter: T::lit(10.0 * MICRO),
            loading_hole: true,
            inner_control_width: T::lit(150.0 * MICRO),
            outer_control_width: T::lit(150.0 * MICRO),
            arc_resolution: T::one(),
            shorted: vec!["e22".into(), "e67".into(), "e89".into()],
            rf_drive: RfDrive::default(),
            species: IonSpecies::default(),
        };
        p.arc_resolution = p.resolution_for_sagitta(T::lit(DEFAULT_SAGITTA));
        p
    }
}

struct Radii<T> {
    inner_ground: T,
    inner_control: (T, T),
    inner_rail: (T, T),
    center: (T, T),
    outer_rail: (T, T),
    outer_control: (T, T),
    outer_ground: T,
}

impl<T: Real> RingLayoutParams<T> {
    /// Outermost drawn radius (inner edge of the outer ground plane).
    pub fn outer_radius(&self) -> T {
        self.radii().outer_ground
    }

    /// Arc vertices per degree so that no chord on any drawn circle has a
    /// sagitta above `sagitta`.
    pub fn resolution_for_sagitta(&self, sagitta: T) -> T {
        let r = self.outer_radius();
        let max_step = T::lit(2.0) * (T::one() - sagitta / r).acos();
        T::one() / max_step.to_degrees()
    }

    /// Chords per electrode pitch on the shared angular grid.
    pub fn chords_per_segment(&self) -> usize {
        let pitch_deg = 360.0 / self.n_segments as f64;
        ((pitch_deg * self.arc_resolution.as_f64()) - 1e-9)
            .ceil()
            .max(1.0) as usize
    }

    fn radii(&self) -> Radii<T> {
        let half = self.rf_rail_separation / T::lit(2.0);
        let g = self.gap_width;
        let a = self.rf_rail_width;
        let r0 = self.ring_radius;
        let inner_rail = (r0 - half - a, r0 - half);
        let outer_rail = (r0 + half, r0 + half + a);
        let inner_control = (
            inner_rail.0 - g - self.inner_control_width,
            inner_rail.0 - g,
        );
        let outer_control = (
            outer_rail.1 + g,
            outer_rail.1 + g + self.outer_control_width,
        );
        Radii {
            inner_ground: inner_control.0 - g,
            inner_control,
            inner_rail,
            center: (r0 - half + g, r0 + half - g),
            outer_rail,
            outer_control,
            outer_ground: outer_control.1 + g,
        }
    }

    /// Half of the angle a gap of `gap_width` subtends as a chord at `radius`.
    pub fn wedge_half_angle(&self, radius: T) -> T {
        (self.gap_width / (T::lit(2.0) * radius)).asin()
    }

    /// Straight-rail estimate of the rf null height, used as the initial site
    /// height before the minimum ring is located.
    pub fn estimated_height(&self) -> T {
        let half = self.rf_rail_separation / T::lit(2.0);
        (half * (half + self.rf_rail_width)).sqrt()
    }

    fn check(&self) -> Result<(), GeometryError> {
        let positive = [
            ("ring_radius", self.ring_radius),
            ("rf_rail_width", self.rf_rail_width),
            ("rf_rail_separation", self.rf_rail_separation),
            ("gap_width", self.gap_width),
            ("loading_hole_diameter", self.loading_hole_diameter),
            ("inner_control_width", self.inner_control_width),
            ("outer_control_width", self.outer_control_width),
            ("arc_resolution", self.arc_resolution),
        ];
        for (name, v) in positive {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(GeometryError::InvalidParameter {
                    name,
                    reason: format!("must be positive and finite, got {v:?}"),
                });
            }
        }
        if self.n_segments == 0 {
            return Err(GeometryError::InvalidParameter {
                name: "n_segments",
                reason: "must be at least 1".into(),
            });
        }
        let r = self.radii();
        if !(r.inner_ground > T::zero()) {
            return Err(GeometryError::InvalidParameter {
                name: "inner_control_width",
                reason: "rings extend past the trap center".into(),
            });
        }
        if !(r.center.1 > r.center.0) {
            return Err(GeometryError::InvalidParameter {
                name: "rf_rail_separation",
                reason: "gaps consume the central electrode".into(),
            });
        }
        let n = T::from_usize(self.n_segments).unwrap();
        for radius in [r.inner_control.0, r.outer_control.0] {
            let pitch = T::TAU() * radius / n;
            if !(self.gap_width < pitch) {
                return Err(GeometryError::GapConsumesElectrode {
                    gap_um: self.gap_width.as_f64() / MICRO,
                    pitch_um: pitch.as_f64() / MICRO,
                    radius_um: radius.as_f64() / MICRO,
                });
            }
        }
        Ok(())
    }
}

/// Sorted angular breakpoints on one circle, with their vertices computed
/// once so neighbouring polygons share bit-identical vertices.
struct Circle<T: Real> {
    angles: Vec<T>,
    points: Vec<[T; 2]>,
}

impl<T: Real> Circle<T> {
    fn new(radius: T, mut angles: Vec<T>) -> Self {
        let tau = T::TAU();
        for a in angles.iter_mut() {
            *a = *a - tau * (*a / tau).floor();
            if *a >= tau {
                *a = T::zero();
            }
        }
        angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let tol = T::epsilon() * T::lit(64.0);
        angles.dedup_by(|a, b| (*a - *b).abs() <= tol);
        if let (Some(&first), Some(&last)) = (angles.first(), angles.last()) {
            if angles.len() > 1 && (first + tau - last).abs() <= tol {
                angles.pop();
            }
        }
        let points = angles
            .iter()
            .map(|&a| {
                let (s, c) = a.sin_cos();
                [radius * c, radius * s]
            })
            .collect();
        Self { angles, points }
    }

    fn index_of(&self, theta: T) -> usize {
        let tau = T::TAU();
        let t = theta - tau * (theta / tau).floor();
        let mut best = 0;
        let mut best_d = T::infinity();
        for (i, &a) in self.angles.iter().enumerate() {
            let d = (a - t).abs();
            let d = d.min(tau - d);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Vertices from `from` to `to` walking counterclockwise, inclusive.
    fn arc(&self, from: T, to: T) -> Vec<[T; 2]> {
        let n = self.points.len();
        let i0 = self.index_of(from);
        let i1 = self.index_of(to);
        let mut out = vec![self.points[i0]];
        let mut i = i0;
        while i != i1 {
            i = (i + 1) % n;
            out.push(self.points[i]);
        }
        out
    }
}

fn sector<T: Real>(
    inner: &Circle<T>,
    outer: &Circle<T>,
    from: T,
    to: T,
) -> Result<Polygon<T>, GeometryError> {
    let mut v = outer.arc(from, to);
    let mut back = inner.arc(from, to);
    back.reverse();
    v.extend(back);
    Polygon::new(v)
}

/// Builds the ring-trap layout: `2 n_segments + 1` control electrodes, one rf
/// electrode made of two annular rails, inner and outer ground planes, and the
/// grounded gap strips. Site positions are placeholders at the layout radius
/// and a straight-rail height estimate until the minimum ring is located.
pub fn build_ring_layout<T: Real>(
    params: &RingLayoutParams<T>,
) -> Result<TrapModel<T>, GeometryError> {
    params.check()?;
    let n = params.n_segments;
    let nt = T::from_usize(n).unwrap();
    let pitch = T::TAU() / nt;
    let m = params.chords_per_segment();
    let r = params.radii();
    let two = T::lit(2.0);

    let site_angle = |k: usize| pitch * T::from_usize(k).unwrap();
    let mut grid: Vec<T> = (0..n * m)
        .map(|k| T::TAU() * T::from_usize(k).unwrap() / T::from_usize(n * m).unwrap())
        .collect();
    grid.push(T::zero());
    grid.push(T::PI());

    let mid_in = (r.inner_control.0 + r.inner_control.1) / two;
    let mid_out = (r.outer_control.0 + r.outer_control.1) / two;
    let d_in = params.wedge_half_angle(mid_in);
    let d_out = params.wedge_half_angle(mid_out);
    let wedge_breaks = |d: T| -> Vec<T> {
        (0..n)
            .flat_map(|k| [site_angle(k) - d, site_angle(k) + d])
            .collect()
    };
    let circle = |radius: T, extra: Vec<T>| {
        let mut a = grid.clone();
        a.extend(extra);
        Circle::new(radius, a)
    };

    let c_ig = circle(r.inner_ground, vec![]);
    let c_ic0 = circle(r.inner_control.0, wedge_breaks(d_in));
    let c_ic1 = circle(r.inner_control.1, wedge_breaks(d_in));
    let c_ir0 = circle(r.inner_rail.0, vec![]);
    let c_ir1 = circle(r.inner_rail.1, vec![]);
    let c_c0 = circle(r.center.0, vec![]);
    let c_c1 = circle(r.center.1, vec![]);
    let c_or0 = circle(r.outer_rail.0, vec![]);
    let c_or1 = circle(r.outer_rail.1, vec![]);
    let c_oc0 = circle(r.outer_control.0, wedge_breaks(d_out));
    let c_oc1 = circle(r.outer_control.1, wedge_breaks(d_out));
    let c_og = circle(r.outer_ground, vec![]);

    // Full annuli are split at every site azimuth so the polygon set is
    // invariant under rotation by one pitch.
    let annulus =
        |inner: &Circle<T>, outer: &Circle<T>| -> Result<Vec<Polygon<T>>, GeometryError> {
            if n == 1 {
                return Ok(vec![
                    sector(inner, outer, T::zero(), T::PI())?,
                    sector(inner, outer, T::PI(), T::TAU())?,
                ]);
            }
            (0..n)
                .map(|k| sector(inner, outer, site_angle(k), site_angle(k + 1)))
                .collect()
        };
    let sectored = |inner: &Circle<T>,
                    outer: &Circle<T>,
                    d: T|
     -> Result<(Vec<Polygon<T>>, Vec<Polygon<T>>), GeometryError> {
        let mut electrodes = Vec::with_capacity(n);
        let mut wedges = Vec::with_capacity(n);
        for k in 0..n {
            electrodes.push(sector(
                inner,
                outer,
                site_angle(k) + d,
                site_angle(k + 1) - d,
            )?);
            wedges.push(sector(inner, outer, site_angle(k) - d, site_angle(k) + d)?);
        }
        Ok((electrodes, wedges))
    };

    let mut electrodes = Vec::with_capacity(2 * n + 4);
    let mut gaps = Vec::new();

    let (inner_ctrl, inner_wedges) = sectored(&c_ic0, &c_ic1, d_in)?;
    let (outer_ctrl, outer_wedges) = sectored(&c_oc0, &c_oc1, d_out)?;
    let width = (2 * n + 1).to_string().len().max(2);
    let label = |k: usize| format!("e{k:0width$}");
    for (k, p) in inner_ctrl.into_iter().enumerate() {
        electrodes.push(Electrode::new(
            label(k + 1),
            ElectrodeRole::Control,
            vec![p],
        ));
    }
    for (k, p) in outer_ctrl.into_iter().enumerate() {
        electrodes.push(Electrode::new(
            label(n + k + 1),
            ElectrodeRole::Control,
            vec![p],
        ));
    }
    electrodes.push(Electrode::new(
        label(2 * n + 1),
        ElectrodeRole::Control,
        annulus(&c_c0, &c_c1)?,
    ));
    let mut rf_shapes = annulus(&c_ir0, &c_ir1)?;
    rf_shapes.extend(annulus(&c_or0, &c_or1)?);
    electrodes.push(Electrode::new("rf", ElectrodeRole::Rf, rf_shapes));
    electrodes.push(Electrode::new(
        "gnd_inner",
        ElectrodeRole::Ground,
        vec![Polygon::new(c_ig.points.clone())?],
    ));
    let mut outer_ground = Electrode::new(
        "gnd_outer",
        ElectrodeRole::Ground,
        vec![Polygon::new(c_og.points.clone())?],
    );
    outer_ground.unbounded = true;
    electrodes.push(outer_ground);
    for e in electrodes.iter_mut() {
        if params.shorted.iter().any(|s| s == &e.id) {
            e.shorted = true;
        }
    }

    gaps.extend(annulus(&c_ig, &c_ic0)?);
    gaps.extend(inner_wedges);
    gaps.extend(annulus(&c_ic1, &c_ir0)?);
    gaps.extend(annulus(&c_ir1, &c_c0)?);
    gaps.extend(annulus(&c_c1, &c_or0)?);
    gaps.extend(annulus(&c_or1, &c_oc0)?);
    gaps.extend(outer_wedges);
    gaps.extend(annulus(&c_oc1, &c_og)?);

    let h = params.estimated_height();
    let sites = (0..n)
        .map(|k| {
            let (s, c) = site_angle(k).sin_cos();
            RingSite::new(
                k,
                site_angle(k),
                [params.ring_radius * c, params.ring_radius * s, h],
            )
        })
        .collect();
    let loading_hole = params.loading_hole.then(|| LoadingHole {
        center: [params.ring_radius, T::zero()],
        diameter: params.loading_hole_diameter,
    });

    TrapModel::new(
        electrodes,
        gaps,
        params.rf_drive,
        params.species,
        sites,
        loading_hole,
    )
}
