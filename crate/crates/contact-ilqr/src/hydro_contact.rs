//! Pressure-field contact between planar primitives.
//!
//! Bodies are assigned compliant pressure fields parameterized by a
//! hydroelastic-style modulus; where two bodies overlap, an equilibrium chord
//! (the planar stand-in for a contact surface) carries a pressure profile
//! whose line integral is the normal force. Forces are zero exactly at zero
//! depth, grow smoothly like `depth^(3/2)` from onset, lose energy through a
//! Hunt-Crossley style dissipation factor, and resist sliding through
//! velocity-regularized Coulomb friction. Everything is smooth away from the
//! dissipation clamp, so trajectories through contact onset remain
//! differentiable.
//!
//! Planar line integrals are forces per unit out-of-plane depth; a unit depth
//! of 1 m is assumed throughout so moduli keep Pa units.
//!
//! Supported pairs: disc against half-plane and disc against disc. At most one
//! member of a pair may be rigid (infinite modulus).

use nalgebra::{DVector, Vector2};
use thiserror::Error;

use crate::diff::Real;
use crate::multibody::{
    apply_point_force, point_velocity_of, GeneralizedState, KinState, MultibodyModel, SiteRef,
};

/// Friction regularization velocity scale, m/s. Sliding slower than this is
/// treated as (smoothly regularized) stiction.
pub const STICTION_VELOCITY: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum GeomShape {
    Disc {
        radius: f64,
    },
    /// Solid half-plane `{ x : normal . x <= offset }` in the attachment frame.
    HalfPlane {
        normal: [f64; 2],
        offset: f64,
    },
}

impl GeomShape {
    fn kind_name(&self) -> &'static str {
        match self {
            GeomShape::Disc { .. } => "disc",
            GeomShape::HalfPlane { .. } => "half_plane",
        }
    }
}

/// A contact geometry with its pressure-field material parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureFieldGeom {
    pub name: String,
    pub shape: GeomShape,
    /// Hydroelastic modulus, Pa. `f64::INFINITY` marks a rigid body.
    pub modulus: f64,
    /// Dissipation, s/m. Scales force up during approach and down toward the
    /// no-adhesion clamp during separation.
    pub dissipation: f64,
    pub mu_static: f64,
    pub mu_dynamic: f64,
}

impl PressureFieldGeom {
    pub(crate) fn validate(&self) -> Result<(), String> {
        if !(self.modulus > 0.0) {
            return Err("modulus must be positive (or infinite for rigid)".into());
        }
        if !(self.dissipation >= 0.0) {
            return Err("dissipation must be nonnegative".into());
        }
        if !(self.mu_static >= self.mu_dynamic && self.mu_dynamic >= 0.0) {
            return Err("friction must satisfy mu_static >= mu_dynamic >= 0".into());
        }
        match self.shape {
            GeomShape::Disc { radius } => {
                if !(radius > 0.0) {
                    return Err("disc radius must be positive".into());
                }
            }
            GeomShape::HalfPlane { normal, .. } => {
                let len = (normal[0] * normal[0] + normal[1] * normal[1]).sqrt();
                if (len - 1.0).abs() > 1e-9 {
                    return Err("half-plane normal must be a unit vector".into());
                }
            }
        }
        Ok(())
    }
}

/// World placement of a geometry: position of its anchor and frame angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2 {
    pub position: [f64; 2],
    pub angle: f64,
}

impl Pose2 {
    pub fn translation(x: f64, y: f64) -> Self {
        Pose2 {
            position: [x, y],
            angle: 0.0,
        }
    }
}

/// Geometric description of one overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapData {
    /// Penetration depth, m (> 0).
    pub depth: f64,
    /// Unit normal pointing from geometry B into geometry A.
    pub normal: [f64; 2],
    /// Centroid of the equilibrium chord; forces are applied here.
    pub contact_point: [f64; 2],
    /// Half-extent of the chord, the planar analog of patch size.
    pub segment_half_length: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum ContactError {
    #[error("unsupported geometry pair: {0} vs {1}")]
    UnsupportedPair(&'static str, &'static str),
}

/// A resolved contact: force on body A applied at a point (B receives the
/// opposite force at the same point).
#[derive(Debug, Clone, PartialEq)]
pub struct ContactWrench {
    /// Geometry names (A, B).
    pub pair: (String, String),
    pub force: Vector2<f64>,
    pub application_point: Vector2<f64>,
}

pub(crate) fn pair_supported(a: &GeomShape, b: &GeomShape) -> bool {
    !matches!(
        (a, b),
        (GeomShape::HalfPlane { .. }, GeomShape::HalfPlane { .. })
    )
}

/// Series-combined modulus of a pair; rigid sides drop out.
fn effective_modulus(ea: f64, eb: f64) -> f64 {
    let inv = if ea.is_infinite() { 0.0 } else { 1.0 / ea }
        + if eb.is_infinite() { 0.0 } else { 1.0 / eb };
    debug_assert!(inv > 0.0, "a contact pair cannot be rigid on both sides");
    1.0 / inv
}

/// Pair dissipation is additive: each side contributes its own loss.
fn effective_dissipation(a: &PressureFieldGeom, b: &PressureFieldGeom) -> f64 {
    a.dissipation + b.dissipation
}

fn combined_friction(a: &PressureFieldGeom, b: &PressureFieldGeom) -> (f64, f64) {
    let comb = |x: f64, y: f64| {
        if x + y > 0.0 {
            2.0 * x * y / (x + y)
        } else {
            0.0
        }
    };
    (
        comb(a.mu_static, b.mu_static),
        comb(a.mu_dynamic, b.mu_dynamic),
    )
}

/// Elastic normal force for a disc pressure field sampled on the surface
/// chord of a half-plane: `(E/R) * integral of radial depth over the chord`.
///
/// Closed form of `E/R * int_{-l}^{l} (R - sqrt(s^2 + b^2)) ds` with
/// `b = R - depth`, `l = sqrt(2 R depth - depth^2)`. Zero at zero depth,
/// strictly increasing on `(0, R)`, and continued linearly past full
/// submersion (`depth >= R`) so deep penetration still pushes back.
fn elastic_disc_plane<T: Real>(e_eff: f64, radius: f64, depth: T) -> T {
    let e = T::from_f64(e_eff);
    let r = T::from_f64(radius);
    if depth.primal() >= radius {
        return e * depth;
    }
    let b = r - depth;
    let chord = (depth * (r + r - depth)).sqrt();
    e * (chord - b * b / r * ((chord + r) / b).ln())
}

/// Elastic normal force for two overlapping discs.
///
/// Thin-lens form: the overlap thickness profile is treated parabolically,
/// giving `(4/3) * E_eff * sqrt(2) * depth^(3/2) / sqrt(r_h)` with the
/// harmonic radius `r_h = ra rb / (ra + rb)`. Symmetric in the pair, zero at
/// onset, strictly increasing.
fn elastic_disc_disc<T: Real>(e_eff: f64, r_h: f64, depth: T) -> T {
    let scale = 4.0 / 3.0 * e_eff * std::f64::consts::SQRT_2 / r_h.sqrt();
    T::from_f64(scale) * depth * depth.sqrt()
}

/// Parameters of the normal-force law for one placed pair.
#[derive(Debug, Clone, Copy)]
enum ForceLaw {
    DiscPlane { radius: f64 },
    DiscDisc { r_h: f64 },
}

fn elastic_force<T: Real>(e_eff: f64, law: ForceLaw, depth: T) -> T {
    match law {
        ForceLaw::DiscPlane { radius } => elastic_disc_plane(e_eff, radius, depth),
        ForceLaw::DiscDisc { r_h } => elastic_disc_disc(e_eff, r_h, depth),
    }
}

struct OverlapGeneric<T> {
    depth: T,
    normal: [T; 2],
    point: [T; 2],
    half_len: T,
    law: ForceLaw,
}

enum PlacedShape<T> {
    Disc { center: [T; 2], radius: f64, modulus: f64 },
    HalfPlane { normal: [T; 2], support: T },
}

fn place_shape<T: Real>(geom: &PressureFieldGeom, position: [T; 2], angle: T) -> PlacedShape<T> {
    match geom.shape {
        GeomShape::Disc { radius } => PlacedShape::Disc {
            center: position,
            radius,
            modulus: geom.modulus,
        },
        GeomShape::HalfPlane { normal, offset } => {
            let (s, c) = (angle.sin(), angle.cos());
            let n = [
                c * T::from_f64(normal[0]) - s * T::from_f64(normal[1]),
                s * T::from_f64(normal[0]) + c * T::from_f64(normal[1]),
            ];
            // Surface: n . x = n . position + offset
            let support = n[0] * position[0] + n[1] * position[1] + T::from_f64(offset);
            PlacedShape::HalfPlane { normal: n, support }
        }
    }
}

/// Overlap of two placed shapes. `flip` in the result is handled by the
/// caller; here A is always the first argument and the normal points from B
/// into A.
fn overlap_generic<T: Real>(a: &PlacedShape<T>, b: &PlacedShape<T>) -> Option<OverlapGeneric<T>> {
    match (a, b) {
        (
            PlacedShape::Disc {
                center,
                radius,
                ..
            },
            PlacedShape::HalfPlane { normal, support },
        ) => {
            let r = *radius;
            let sd = normal[0] * center[0] + normal[1] * center[1] - *support;
            let depth = T::from_f64(r) - sd;
            if depth.primal() <= 0.0 {
                return None;
            }
            // Chord lies on the plane surface, centered under the disc.
            let point = [center[0] - normal[0] * sd, center[1] - normal[1] * sd];
            let half_len = if depth.primal() >= r {
                T::from_f64(r)
            } else {
                (depth * (T::from_f64(2.0 * r) - depth)).sqrt()
            };
            Some(OverlapGeneric {
                depth,
                normal: *normal,
                point,
                half_len,
                law: ForceLaw::DiscPlane { radius: r },
            })
        }
        (
            PlacedShape::Disc {
                center: ca,
                radius: ra,
                modulus: ea,
            },
            PlacedShape::Disc {
                center: cb,
                radius: rb,
                modulus: eb,
            },
        ) => {
            let dvec = [ca[0] - cb[0], ca[1] - cb[1]];
            let dist = (dvec[0] * dvec[0] + dvec[1] * dvec[1]).sqrt();
            let depth = T::from_f64(ra + rb) - dist;
            if depth.primal() <= 0.0 {
                return None;
            }
            let normal = if dist.primal() > 1e-9 {
                [dvec[0] / dist, dvec[1] / dist]
            } else {
                [T::zero(), T::one()]
            };
            // Equilibrium chord splits the depth in inverse proportion to the
            // moduli, placing it on the stiffer body's boundary in the limit.
            let wa = if ea.is_infinite() { 0.0 } else { 1.0 / ea };
            let wb = if eb.is_infinite() { 0.0 } else { 1.0 / eb };
            let depth_a = depth * T::from_f64(wa / (wa + wb));
            let off = T::from_f64(*ra) - depth_a;
            let point = [ca[0] - normal[0] * off, ca[1] - normal[1] * off];
            let r_h = ra * rb / (ra + rb);
            let half_len = T::min(
                (T::from_f64(2.0 * r_h) * depth).sqrt(),
                T::from_f64(ra.min(*rb)),
            );
            Some(OverlapGeneric {
                depth,
                normal,
                point,
                half_len,
                law: ForceLaw::DiscDisc { r_h },
            })
        }
        _ => None,
    }
}

/// Detects overlap between two posed geometries.
///
/// Returns `Ok(None)` at separation or exact touch. The normal points from B
/// into A.
pub fn detect_overlap(
    a: &PressureFieldGeom,
    pose_a: &Pose2,
    b: &PressureFieldGeom,
    pose_b: &Pose2,
) -> Result<Option<OverlapData>, ContactError> {
    if !pair_supported(&a.shape, &b.shape) {
        return Err(ContactError::UnsupportedPair(
            a.shape.kind_name(),
            b.shape.kind_name(),
        ));
    }
    let pa = place_shape(a, pose_a.position, pose_a.angle);
    let pb = place_shape(b, pose_b.position, pose_b.angle);
    let (result, flip) = match (&a.shape, &b.shape) {
        (GeomShape::HalfPlane { .. }, GeomShape::Disc { .. }) => (overlap_generic(&pb, &pa), true),
        _ => (overlap_generic(&pa, &pb), false),
    };
    Ok(result.map(|o| {
        let sign = if flip { -1.0 } else { 1.0 };
        OverlapData {
            depth: o.depth,
            normal: [sign * o.normal[0], sign * o.normal[1]],
            contact_point: o.point,
            segment_half_length: o.half_len,
        }
    }))
}

/// Normal force magnitude for an overlapping pair.
///
/// `separation_rate` is the time derivative of the gap (positive while the
/// bodies separate). The Hunt-Crossley style factor `max(0, 1 - d *
/// separation_rate)` amplifies force during approach, attenuates it during
/// separation, and clamps at zero so the contact can never pull.
pub fn normal_force_magnitude(
    a: &PressureFieldGeom,
    b: &PressureFieldGeom,
    overlap: &OverlapData,
    separation_rate: f64,
) -> f64 {
    let law = match (&a.shape, &b.shape) {
        (GeomShape::Disc { radius }, GeomShape::HalfPlane { .. })
        | (GeomShape::HalfPlane { .. }, GeomShape::Disc { radius }) => ForceLaw::DiscPlane {
            radius: *radius,
        },
        (GeomShape::Disc { radius: ra }, GeomShape::Disc { radius: rb }) => ForceLaw::DiscDisc {
            r_h: ra * rb / (ra + rb),
        },
        _ => unreachable!("unsupported pairs are rejected by detect_overlap"),
    };
    let e_eff = effective_modulus(a.modulus, b.modulus);
    let d_eff = effective_dissipation(a, b);
    let elastic = elastic_force(e_eff, law, overlap.depth);
    elastic * f64::max(0.0, 1.0 - d_eff * separation_rate)
}

/// Regularized Coulomb friction along the contact tangent.
///
/// Odd in the slip velocity, bounded by `mu_static * f_n`, and approaching
/// `mu_dynamic * f_n` at speed. Returns the force on body A given the
/// tangential velocity of A relative to B.
pub fn friction_force(
    a: &PressureFieldGeom,
    b: &PressureFieldGeom,
    normal_force: f64,
    tangential_velocity: f64,
) -> f64 {
    let (mu_s, mu_d) = combined_friction(a, b);
    friction_generic(mu_s, mu_d, normal_force, tangential_velocity)
}

fn friction_generic<T: Real>(mu_s: f64, mu_d: f64, f_n: T, v_t: T) -> T {
    let eps = T::from_f64(STICTION_VELOCITY);
    let ratio = v_t * v_t / (eps * eps);
    let mu = T::from_f64(mu_d) + T::from_f64(mu_s - mu_d) * (-ratio).exp();
    -mu * f_n * v_t / (v_t * v_t + eps * eps).sqrt()
}

/// Force on geometry A of a registered pair at the given kinematic state, with
/// its application point. `None` when separated.
pub(crate) fn pair_contact<T: Real>(
    model: &MultibodyModel,
    kin: &KinState<T>,
    ga: usize,
    gb: usize,
) -> Option<([T; 2], [T; 2])> {
    let geom_a = &model.geometries()[ga];
    let geom_b = &model.geometries()[gb];
    let site_a = model.geom_site(ga);
    let site_b = model.geom_site(gb);
    let place = |geom: &PressureFieldGeom, site: &SiteRef| {
        place_shape(geom, kin.site_position(site), kin.site_angle(site))
    };
    // Keep the disc first so the overlap code sees a canonical ordering.
    let flip = matches!(geom_a.shape, GeomShape::HalfPlane { .. });
    let (first, second, s_first, s_second) = if flip {
        (geom_b, geom_a, &site_b, &site_a)
    } else {
        (geom_a, geom_b, &site_a, &site_b)
    };
    let overlap = overlap_generic(&place(first, s_first), &place(second, s_second))?;

    // Normal pointing from B into A, regardless of the canonical swap.
    let sign = if flip { -T::one() } else { T::one() };
    let normal = [overlap.normal[0] * sign, overlap.normal[1] * sign];
    let point = overlap.point;

    let va = kin.point_velocity(&site_a, &point);
    let vb = kin.point_velocity(&site_b, &point);
    let rel = [va[0] - vb[0], va[1] - vb[1]];
    let separation_rate = normal[0] * rel[0] + normal[1] * rel[1];
    let tangent = [-normal[1], normal[0]];
    let v_t = tangent[0] * rel[0] + tangent[1] * rel[1];

    let e_eff = effective_modulus(geom_a.modulus, geom_b.modulus);
    let d_eff = T::from_f64(effective_dissipation(geom_a, geom_b));
    let elastic = elastic_force(e_eff, overlap.law, overlap.depth);
    let f_n = elastic * T::max(T::zero(), T::one() - d_eff * separation_rate);
    let (mu_s, mu_d) = combined_friction(geom_a, geom_b);
    let f_t = friction_generic(mu_s, mu_d, f_n, v_t);

    let force_on_a = [
        normal[0] * f_n + tangent[0] * f_t,
        normal[1] * f_n + tangent[1] * f_t,
    ];
    Some((point, force_on_a))
}

/// Adds `sum_c J_c^T f_c` over all registered pairs into `out`.
pub(crate) fn accumulate_contact_forces<T: Real>(
    model: &MultibodyModel,
    kin: &KinState<T>,
    out: &mut [T],
) {
    for &(ga, gb) in model.contact_pairs() {
        if let Some((point, force)) = pair_contact(model, kin, ga, gb) {
            let site_a = model.geom_site(ga);
            let site_b = model.geom_site(gb);
            apply_point_force(model, kin, &site_a, &point, &force, out);
            let opposite = [-force[0], -force[1]];
            apply_point_force(model, kin, &site_b, &point, &opposite, out);
        }
    }
}

/// All active contact wrenches at a state plus their generalized-force
/// projection. Separated pairs contribute nothing.
pub fn total_contact_forces(
    model: &MultibodyModel,
    x: &GeneralizedState,
) -> (Vec<ContactWrench>, DVector<f64>) {
    let q: Vec<f64> = x.q.iter().copied().collect();
    let v: Vec<f64> = x.v.iter().copied().collect();
    let kin = model.kinematics(&q, &v);
    let mut generalized = vec![0.0; model.num_coords()];
    let mut wrenches = Vec::new();
    for &(ga, gb) in model.contact_pairs() {
        if let Some((point, force)) = pair_contact(model, &kin, ga, gb) {
            let site_a = model.geom_site(ga);
            let site_b = model.geom_site(gb);
            apply_point_force(model, &kin, &site_a, &point, &force, &mut generalized);
            let opposite = [-force[0], -force[1]];
            apply_point_force(model, &kin, &site_b, &point, &opposite, &mut generalized);
            wrenches.push(ContactWrench {
                pair: (
                    model.geometries()[ga].name.clone(),
                    model.geometries()[gb].name.clone(),
                ),
                force: Vector2::new(force[0], force[1]),
                application_point: Vector2::new(point[0], point[1]),
            });
        }
    }
    (wrenches, DVector::from_vec(generalized))
}

/// Slip speed at the contact point of a pair, if it is in contact.
///
/// Useful for detecting rolling-versus-sliding regimes in solved
/// trajectories.
pub fn pair_slip_speed(model: &MultibodyModel, x: &GeneralizedState, pair: usize) -> Option<f64> {
    let (ga, gb) = model.contact_pairs()[pair];
    let q: Vec<f64> = x.q.iter().copied().collect();
    let v: Vec<f64> = x.v.iter().copied().collect();
    let kin = model.kinematics(&q, &v);
    let geom_a = &model.geometries()[ga];
    let geom_b = &model.geometries()[gb];
    let site_a = model.geom_site(ga);
    let site_b = model.geom_site(gb);
    let flip = matches!(geom_a.shape, GeomShape::HalfPlane { .. });
    let (first, second, s_first, s_second) = if flip {
        (geom_b, geom_a, &site_b, &site_a)
    } else {
        (geom_a, geom_b, &site_a, &site_b)
    };
    let pf = place_shape(first, kin.site_position(s_first), kin.site_angle(s_first));
    let ps = place_shape(second, kin.site_position(s_second), kin.site_angle(s_second));
    let overlap = overlap_generic(&pf, &ps)?;
    let va = kin.point_velocity(&site_a, &overlap.point);
    let vb = kin.point_velocity(&site_b, &overlap.point);
    let rel = [va[0] - vb[0], va[1] - vb[1]];
    let tangent = [-overlap.normal[1], overlap.normal[0]];
    Some((tangent[0] * rel[0] + tangent[1] * rel[1]).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc(name: &str, radius: f64, modulus: f64) -> PressureFieldGeom {
        PressureFieldGeom {
            name: name.into(),
            shape: GeomShape::Disc { radius },
            modulus,
            dissipation: 0.0,
            mu_static: 0.5,
            mu_dynamic: 0.3,
        }
    }

    fn ground(modulus: f64) -> PressureFieldGeom {
        PressureFieldGeom {
            name: "ground".into(),
            shape: GeomShape::HalfPlane {
                normal: [0.0, 1.0],
                offset: 0.0,
            },
            modulus,
            dissipation: 0.0,
            mu_static: 0.5,
            mu_dynamic: 0.3,
        }
    }

    #[test]
    fn exact_touch_is_no_overlap() {
        let d = disc("d", 0.1, 5e6);
        let g = ground(f64::INFINITY);
        let o = detect_overlap(&d, &Pose2::translation(0.3, 0.1), &g, &Pose2::translation(0.0, 0.0))
            .unwrap();
        assert!(o.is_none());
    }

    #[test]
    fn disc_plane_overlap_geometry() {
        let d = disc("d", 0.1, 5e6);
        let g = ground(f64::INFINITY);
        let o = detect_overlap(&d, &Pose2::translation(0.3, 0.095), &g, &Pose2::translation(0.0, 0.0))
            .unwrap()
            .expect("overlapping");
        assert!((o.depth - 0.005).abs() < 1e-12);
        assert_eq!(o.normal, [0.0, 1.0]);
        let expect_half = (2.0 * 0.1 * 0.005 - 0.005 * 0.005_f64).sqrt();
        assert!((o.segment_half_length - expect_half).abs() < 1e-12);
        assert!((expect_half - 0.03122).abs() < 1e-5);
        assert!((o.contact_point[0] - 0.3).abs() < 1e-12);
        assert!(o.contact_point[1].abs() < 1e-12);
    }

    /// Chord half-length agrees with a bisection root of the circle equation.
    #[test]
    fn chord_against_root_finding_oracle() {
        let r: f64 = 0.1;
        let depth = 0.0321;
        let b = r - depth;
        // Find s >= 0 with sqrt(s^2 + b^2) = r.
        let (mut lo, mut hi) = (0.0_f64, r);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (mid * mid + b * b).sqrt() < r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let expect = 0.5 * (lo + hi);
        let got = (depth * (2.0 * r - depth)).sqrt();
        assert!((got - expect).abs() < 1e-9);
    }

    #[test]
    fn disc_disc_equal_moduli_chord_at_midpoint() {
        let a = disc("a", 0.1, 5e6);
        let b = disc("b", 0.1, 5e6);
        let o = detect_overlap(
            &a,
            &Pose2::translation(0.19, 0.0),
            &b,
            &Pose2::translation(0.0, 0.0),
        )
        .unwrap()
        .expect("overlapping");
        assert!((o.depth - 0.01).abs() < 1e-12);
        assert_eq!(o.normal, [1.0, 0.0]);
        // Overlap region spans x in [0.09, 0.10]; its midpoint is 0.095.
        assert!((o.contact_point[0] - 0.095).abs() < 1e-12);
        assert!(o.segment_half_length > 0.0);
    }

    #[test]
    fn plane_plane_is_unsupported() {
        let g1 = ground(5e6);
        let g2 = ground(1e4);
        let err = detect_overlap(
            &g1,
            &Pose2::translation(0.0, 0.0),
            &g2,
            &Pose2::translation(0.0, 0.0),
        )
        .unwrap_err();
        assert_eq!(err, ContactError::UnsupportedPair("half_plane", "half_plane"));
    }

    #[test]
    fn swapped_plane_disc_flips_normal() {
        let d = disc("d", 0.1, 5e6);
        let g = ground(f64::INFINITY);
        let o = detect_overlap(&g, &Pose2::translation(0.0, 0.0), &d, &Pose2::translation(0.3, 0.09))
            .unwrap()
            .expect("overlapping");
        // A is the plane, B the disc: normal from disc into plane.
        assert_eq!(o.normal, [0.0, -1.0]);
    }

    /// The closed-form elastic force equals numeric quadrature of the
    /// pressure profile over the chord.
    #[test]
    fn elastic_force_matches_quadrature() {
        let e = 5e6;
        let r: f64 = 0.1;
        for &depth in &[1e-4, 5e-3, 0.03, 0.08] {
            let closed = elastic_disc_plane(e, r, depth);
            // Simpson quadrature of (E/R) (R - sqrt(s^2 + b^2)) over the chord.
            let b = r - depth;
            let l = (depth * (2.0 * r - depth)).sqrt();
            let profile = |s: f64| e / r * (r - (s * s + b * b).sqrt());
            let n = 20_000;
            let h = 2.0 * l / n as f64;
            let mut sum = profile(-l) + profile(l);
            for i in 1..n {
                let s = -l + i as f64 * h;
                sum += profile(s) * if i % 2 == 0 { 2.0 } else { 4.0 };
            }
            let quad = sum * h / 3.0;
            assert!(
                (closed - quad).abs() <= 1e-9 * quad.abs().max(1.0),
                "depth {depth}: closed {closed} vs quadrature {quad}"
            );
        }
    }

    #[test]
    fn elastic_force_vanishes_at_onset_and_grows() {
        let e = 5e6;
        let r = 0.1;
        let mut last = 0.0;
        for i in 1..=100 {
            let depth = r * i as f64 / 100.0;
            let f = elastic_disc_plane(e, r, depth);
            assert!(f > last, "strictly increasing on (0, R)");
            last = f;
        }
        assert!(elastic_disc_plane(e, r, 1e-12) < 1e-2);
        // Continuous across full submersion.
        let below = elastic_disc_plane(e, r, r - 1e-9);
        let above = elastic_disc_plane(e, r, r + 1e-9);
        assert!((below - above).abs() < 1.0);
    }

    #[test]
    fn dissipation_clamp_and_amplification() {
        let mut a = disc("a", 0.1, 5e6);
        a.dissipation = 5.0;
        let g = ground(f64::INFINITY);
        let overlap = OverlapData {
            depth: 0.005,
            normal: [0.0, 1.0],
            contact_point: [0.0, 0.0],
            segment_half_length: 0.03,
        };
        let at_rest = normal_force_magnitude(&a, &g, &overlap, 0.0);
        assert!(at_rest > 0.0);
        // Separating exactly at 1/d_eff: force clamps to zero.
        assert_eq!(normal_force_magnitude(&a, &g, &overlap, 1.0 / 5.0), 0.0);
        assert_eq!(normal_force_magnitude(&a, &g, &overlap, 10.0), 0.0);
        // Approaching amplifies (energy is removed on impact).
        let approaching = normal_force_magnitude(&a, &g, &overlap, -0.1);
        assert!((approaching - at_rest * 1.5).abs() < 1e-9 * at_rest);
    }

    #[test]
    fn friction_is_odd_bounded_and_asymptotic() {
        let a = disc("a", 0.1, 5e6);
        let g = ground(5e6);
        let f_n = 10.0;
        assert_eq!(friction_force(&a, &g, f_n, 0.0), 0.0);
        assert_eq!(friction_force(&a, &g, 0.0, 3.0), 0.0);
        let (mu_s, mu_d) = combined_friction(&a, &g);
        for &v in &[1e-5, 1e-4, 1e-3, 0.01, 0.3, 2.0] {
            let f = friction_force(&a, &g, f_n, v);
            assert!(f <= 0.0, "opposes positive slip");
            assert!(f.abs() <= mu_s * f_n * (1.0 + 1e-12));
            assert!((f + friction_force(&a, &g, f_n, -v)).abs() < 1e-12, "odd");
        }
        let fast = friction_force(&a, &g, f_n, 100.0 * STICTION_VELOCITY).abs();
        assert!((fast - mu_d * f_n).abs() < 0.01 * mu_d * f_n);
    }

    proptest::proptest! {
        #[test]
        fn normal_force_never_adheres(depth in 1e-6..0.09_f64, rate in -10.0..10.0_f64) {
            let mut a = disc("a", 0.1, 5e6);
            a.dissipation = 5.0;
            let g = ground(f64::INFINITY);
            let overlap = OverlapData {
                depth,
                normal: [0.0, 1.0],
                contact_point: [0.0, 0.0],
                segment_half_length: (depth * (0.2 - depth)).sqrt(),
            };
            let f = normal_force_magnitude(&a, &g, &overlap, rate);
            proptest::prop_assert!(f >= 0.0);
        }

        #[test]
        fn friction_bounded_by_static_cone(f_n in 0.0..500.0_f64, v in -5.0..5.0_f64) {
            let a = disc("a", 0.1, 5e6);
            let g = ground(5e6);
            let (mu_s, _) = combined_friction(&a, &g);
            let f = friction_force(&a, &g, f_n, v);
            proptest::prop_assert!(f.abs() <= mu_s * f_n + 1e-9);
        }
    }
}
