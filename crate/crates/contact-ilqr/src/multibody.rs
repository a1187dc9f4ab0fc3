//! Planar rigid-body dynamics in manipulator form.
//!
//! A [`MultibodyModel`] is an immutable tree of links connected by revolute,
//! prismatic, and planar-free joints. The dynamics follow
//! `M(q) dv + C(q,v) v + g(q) = S^T tau + sum_c J_c^T f_c`, discretized with a
//! semi-implicit Euler step (velocity first, then position with the updated
//! velocity). Contact forces come from [`crate::hydro_contact`] and are
//! evaluated at the pre-step state of each substep.
//!
//! Everything numeric is generic over [`Real`], so the same code produces
//! plain values with `f64` and exact derivatives with [`crate::diff::Dual`].
//!
//! Conventions: world y is up by default (`gravity = (0, -9.81)`), angles are
//! counterclockwise, `perp(v)` denotes the +90 degree rotation `(-v_y, v_x)`,
//! and planar twists/wrenches are `(angular, linear_x, linear_y)` reduced at
//! the world origin.

use nalgebra::{DMatrix, DVector, Vector2};
use thiserror::Error;

use crate::diff::Real;
use crate::hydro_contact::{self, ContactWrench, PressureFieldGeom};

/// One rigid link: mass properties plus the collision sites it carries.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub name: String,
    /// Mass in kg. Must be positive.
    pub mass: f64,
    /// Rotational inertia about the center of mass, kg m^2.
    pub inertia: f64,
    /// Center of mass in the link frame, m.
    pub com_offset: [f64; 2],
    pub collision_sites: Vec<CollisionSite>,
}

/// Attachment point for a contact geometry, expressed in the owning frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionSite {
    pub offset: [f64; 2],
    /// Name of the [`PressureFieldGeom`] anchored here.
    pub geometry: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum JointKind {
    /// One rotational coordinate about the joint anchor.
    Revolute,
    /// One translational coordinate along `axis` (unit vector in the joint
    /// frame).
    Prismatic { axis: [f64; 2] },
    /// Free planar motion: coordinates `(x, y, theta)` of the child frame in
    /// the joint frame.
    PlanarFree,
}

impl JointKind {
    pub fn dof(&self) -> usize {
        match self {
            JointKind::Revolute | JointKind::Prismatic { .. } => 1,
            JointKind::PlanarFree => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    /// Parent link name; `None` means the world frame.
    pub parent: Option<String>,
    pub child: String,
    /// Joint anchor in the parent frame, m.
    pub origin: [f64; 2],
    /// Fixed mounting angle from parent frame to joint frame, rad.
    pub angle: f64,
    pub actuated: bool,
    /// Advisory torque/force bound. Recorded, never enforced in `step`;
    /// the CLI reports violations after the fact.
    pub effort_limit: Option<f64>,
}

/// Everything needed to assemble a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDescription {
    pub links: Vec<LinkSpec>,
    pub joints: Vec<JointSpec>,
    pub geometries: Vec<PressureFieldGeom>,
    /// Collision sites fixed in the world frame (e.g. the ground plane).
    pub world_sites: Vec<CollisionSite>,
    /// Geometry name pairs that may exchange contact forces.
    pub contact_pairs: Vec<(String, String)>,
    pub gravity: [f64; 2],
    /// Control/cost timestep h, s.
    pub timestep: f64,
    /// Internal integrator subdivisions per step. One substep reproduces the
    /// plain semi-implicit update; more keep stiff contacts stable while the
    /// control grid stays at `timestep`.
    pub substeps: usize,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("duplicate {kind} name `{name}`")]
    DuplicateName { kind: &'static str, name: String },
    #[error("link `{0}` must have positive mass")]
    NonPositiveMass(String),
    #[error("link `{0}` must have positive inertia")]
    NonPositiveInertia(String),
    #[error("joint `{joint}` references unknown link `{link}`")]
    UnknownLink { joint: String, link: String },
    #[error("link `{0}` is not connected to the world by exactly one joint")]
    NotATree(String),
    #[error("prismatic joint `{0}` has a zero axis")]
    ZeroAxis(String),
    #[error("collision site references unknown geometry `{0}`")]
    UnknownGeometry(String),
    #[error("geometry `{0}` must be referenced by exactly one collision site")]
    GeometryNotAnchored(String),
    #[error("contact pair references unknown geometry `{0}`")]
    UnknownPairGeometry(String),
    #[error("contact pair ({0}, {1}) attaches both geometries to the same link")]
    SameLinkPair(String, String),
    #[error("contact pair ({0}, {1}): both geometries are rigid")]
    BothRigid(String, String),
    #[error("contact pair ({0}, {1}): unsupported geometry kinds")]
    UnsupportedPair(String, String),
    #[error("geometry `{0}`: {1}")]
    BadGeometry(String, String),
    #[error("timestep must be positive")]
    BadTimestep,
    #[error("substeps must be at least 1")]
    BadSubsteps,
    #[error("joint `{0}`: effort limit must be positive")]
    BadEffortLimit(String),
}

#[derive(Debug, Error)]
pub enum MultibodyError {
    #[error("unknown site `{0}`")]
    UnknownSite(String),
    #[error("integration diverged at substep {substep}")]
    IntegrationDiverged { substep: usize },
}

/// Generalized positions and velocities of the whole system.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedState {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
}

impl GeneralizedState {
    pub fn new(q: DVector<f64>, v: DVector<f64>) -> Self {
        assert_eq!(q.len(), v.len(), "q and v must have matching dimension");
        GeneralizedState { q, v }
    }

    pub fn zeros(nq: usize) -> Self {
        GeneralizedState {
            q: DVector::zeros(nq),
            v: DVector::zeros(nq),
        }
    }

    /// `[q; v]` stacked into one vector.
    pub fn stacked(&self) -> DVector<f64> {
        let nq = self.q.len();
        let mut out = DVector::zeros(2 * nq);
        out.rows_mut(0, nq).copy_from(&self.q);
        out.rows_mut(nq, nq).copy_from(&self.v);
        out
    }

    pub fn from_stacked(x: &DVector<f64>) -> Self {
        assert!(x.len() % 2 == 0);
        let nq = x.len() / 2;
        GeneralizedState {
            q: x.rows(0, nq).into_owned(),
            v: x.rows(nq, nq).into_owned(),
        }
    }

    /// Indexes the stacked state: positions first, then velocities.
    pub fn coord(&self, i: usize) -> f64 {
        let nq = self.q.len();
        if i < nq {
            self.q[i]
        } else {
            self.v[i - nq]
        }
    }

    pub fn coord_mut(&mut self, i: usize) -> &mut f64 {
        let nq = self.q.len();
        if i < nq {
            &mut self.q[i]
        } else {
            &mut self.v[i - nq]
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}

/// Actuated generalized forces, one entry per actuated coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlInput {
    pub tau: DVector<f64>,
}

impl ControlInput {
    pub fn new(tau: DVector<f64>) -> Self {
        ControlInput { tau }
    }

    pub fn zeros(m: usize) -> Self {
        ControlInput {
            tau: DVector::zeros(m),
        }
    }
}

/// Reference to a collision site: its owning link (`None` = world) and the
/// offset in that frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteRef {
    pub link: Option<usize>,
    pub offset: [f64; 2],
}

/// Immutable kinematic/dynamic description of the system.
///
/// Construction validates the tree and contact registry; afterwards the model
/// is safe to share across threads and all dynamics entry points are pure
/// functions of `(model, state, input)`.
#[derive(Debug, Clone)]
pub struct MultibodyModel {
    links: Vec<LinkSpec>,
    joints: Vec<JointSpec>,
    geometries: Vec<PressureFieldGeom>,
    world_sites: Vec<CollisionSite>,
    gravity: [f64; 2],
    timestep: f64,
    substeps: usize,

    // Derived indexing, fixed at construction.
    n_coords: usize,
    /// Joint order with parents before children.
    topo_joints: Vec<usize>,
    /// For each link: the joint whose child it is.
    joint_of_link: Vec<usize>,
    parent_link: Vec<Option<usize>>,
    /// First coordinate index of each joint (layout follows declaration order).
    coord_start: Vec<usize>,
    /// Coordinate indices on the path from the root to each link, inclusive.
    link_coord_path: Vec<Vec<usize>>,
    /// Coordinate index of each actuated input slot.
    actuated_coords: Vec<usize>,
    /// Geometry index -> site.
    geom_sites: Vec<SiteRef>,
    /// Validated contact pairs as geometry indices.
    pair_indices: Vec<(usize, usize)>,
}

impl MultibodyModel {
    pub fn new(desc: ModelDescription) -> Result<Self, ModelError> {
        let ModelDescription {
            links,
            joints,
            geometries,
            world_sites,
            contact_pairs,
            gravity,
            timestep,
            substeps,
        } = desc;

        if !(timestep > 0.0 && timestep.is_finite()) {
            return Err(ModelError::BadTimestep);
        }
        if substeps == 0 {
            return Err(ModelError::BadSubsteps);
        }

        let mut link_index = std::collections::BTreeMap::new();
        for (i, link) in links.iter().enumerate() {
            if link_index.insert(link.name.clone(), i).is_some() {
                return Err(ModelError::DuplicateName {
                    kind: "link",
                    name: link.name.clone(),
                });
            }
            if !(link.mass > 0.0) {
                return Err(ModelError::NonPositiveMass(link.name.clone()));
            }
            if !(link.inertia > 0.0) {
                return Err(ModelError::NonPositiveInertia(link.name.clone()));
            }
        }

        let mut joint_names = std::collections::BTreeSet::new();
        let mut joint_of_link = vec![usize::MAX; links.len()];
        let mut parent_link = vec![None; links.len()];
        for (j, joint) in joints.iter().enumerate() {
            if !joint_names.insert(joint.name.clone()) {
                return Err(ModelError::DuplicateName {
                    kind: "joint",
                    name: joint.name.clone(),
                });
            }
            if let JointKind::Prismatic { axis } = &joint.kind {
                if (axis[0] * axis[0] + axis[1] * axis[1]).sqrt() < 1e-12 {
                    return Err(ModelError::ZeroAxis(joint.name.clone()));
                }
            }
            if let Some(limit) = joint.effort_limit {
                if !(limit > 0.0) {
                    return Err(ModelError::BadEffortLimit(joint.name.clone()));
                }
            }
            let child = *link_index
                .get(&joint.child)
                .ok_or_else(|| ModelError::UnknownLink {
                    joint: joint.name.clone(),
                    link: joint.child.clone(),
                })?;
            if joint_of_link[child] != usize::MAX {
                return Err(ModelError::NotATree(joint.child.clone()));
            }
            joint_of_link[child] = j;
            parent_link[child] = match &joint.parent {
                None => None,
                Some(p) => Some(*link_index.get(p).ok_or_else(|| ModelError::UnknownLink {
                    joint: joint.name.clone(),
                    link: p.clone(),
                })?),
            };
        }
        for (i, link) in links.iter().enumerate() {
            if joint_of_link[i] == usize::MAX {
                return Err(ModelError::NotATree(link.name.clone()));
            }
        }

        // Topological order by walking from world-rooted joints; a leftover
        // joint means a cycle or a subtree not anchored to the world.
        let mut topo_joints = Vec::with_capacity(joints.len());
        let mut placed = vec![false; links.len()];
        let mut frontier: Vec<Option<usize>> = vec![None];
        while let Some(parent) = frontier.pop() {
            for (j, joint) in joints.iter().enumerate() {
                let jp = joint.parent.as_ref().map(|p| link_index[p]);
                if jp == parent {
                    let child = link_index[&joint.child];
                    if placed[child] {
                        return Err(ModelError::NotATree(joint.child.clone()));
                    }
                    placed[child] = true;
                    topo_joints.push(j);
                    frontier.push(Some(child));
                }
            }
        }
        if topo_joints.len() != joints.len() {
            let missing = joints
                .iter()
                .enumerate()
                .find(|(j, _)| !topo_joints.contains(j))
                .map(|(_, jt)| jt.child.clone())
                .unwrap_or_default();
            return Err(ModelError::NotATree(missing));
        }

        let mut coord_start = vec![0usize; joints.len()];
        let mut n_coords = 0usize;
        for (j, joint) in joints.iter().enumerate() {
            coord_start[j] = n_coords;
            n_coords += joint.kind.dof();
        }

        let mut link_coord_path: Vec<Vec<usize>> = vec![Vec::new(); links.len()];
        for &j in &topo_joints {
            let child = link_index[&joints[j].child];
            let mut path = match parent_link[child] {
                None => Vec::new(),
                Some(p) => link_coord_path[p].clone(),
            };
            path.extend(coord_start[j]..coord_start[j] + joints[j].kind.dof());
            link_coord_path[child] = path;
        }

        let mut actuated_coords = Vec::new();
        for (j, joint) in joints.iter().enumerate() {
            if joint.actuated {
                actuated_coords.extend(coord_start[j]..coord_start[j] + joint.kind.dof());
            }
        }

        // Resolve geometry anchors: every geometry is carried by exactly one
        // collision site (on a link or on the world).
        let mut geom_index = std::collections::BTreeMap::new();
        for (g, geom) in geometries.iter().enumerate() {
            if geom_index.insert(geom.name.clone(), g).is_some() {
                return Err(ModelError::DuplicateName {
                    kind: "geometry",
                    name: geom.name.clone(),
                });
            }
            geom.validate()
                .map_err(|msg| ModelError::BadGeometry(geom.name.clone(), msg))?;
        }
        let mut geom_sites: Vec<Option<SiteRef>> = vec![None; geometries.len()];
        let mut anchor = |site: &CollisionSite, link: Option<usize>| -> Result<(), ModelError> {
            let g = *geom_index
                .get(&site.geometry)
                .ok_or_else(|| ModelError::UnknownGeometry(site.geometry.clone()))?;
            if geom_sites[g].is_some() {
                return Err(ModelError::GeometryNotAnchored(site.geometry.clone()));
            }
            geom_sites[g] = Some(SiteRef {
                link,
                offset: site.offset,
            });
            Ok(())
        };
        for (i, link) in links.iter().enumerate() {
            for site in &link.collision_sites {
                anchor(site, Some(i))?;
            }
        }
        for site in &world_sites {
            anchor(site, None)?;
        }
        let geom_sites: Vec<SiteRef> = geom_sites
            .into_iter()
            .enumerate()
            .map(|(g, s)| s.ok_or_else(|| ModelError::GeometryNotAnchored(geometries[g].name.clone())))
            .collect::<Result<_, _>>()?;

        let mut pair_indices = Vec::with_capacity(contact_pairs.len());
        for (na, nb) in &contact_pairs {
            let ga = *geom_index
                .get(na)
                .ok_or_else(|| ModelError::UnknownPairGeometry(na.clone()))?;
            let gb = *geom_index
                .get(nb)
                .ok_or_else(|| ModelError::UnknownPairGeometry(nb.clone()))?;
            if geom_sites[ga].link == geom_sites[gb].link {
                return Err(ModelError::SameLinkPair(na.clone(), nb.clone()));
            }
            if geometries[ga].modulus.is_infinite() && geometries[gb].modulus.is_infinite() {
                return Err(ModelError::BothRigid(na.clone(), nb.clone()));
            }
            if !hydro_contact::pair_supported(&geometries[ga].shape, &geometries[gb].shape) {
                return Err(ModelError::UnsupportedPair(na.clone(), nb.clone()));
            }
            pair_indices.push((ga, gb));
        }

        Ok(MultibodyModel {
            links,
            joints,
            geometries,
            world_sites,
            gravity,
            timestep,
            substeps,
            n_coords,
            topo_joints,
            joint_of_link,
            parent_link,
            coord_start,
            link_coord_path,
            actuated_coords,
            geom_sites,
            pair_indices,
        })
    }

    pub fn num_coords(&self) -> usize {
        self.n_coords
    }

    /// State dimension `n = 2 * num_coords`.
    pub fn state_dim(&self) -> usize {
        2 * self.n_coords
    }

    pub fn num_actuated(&self) -> usize {
        self.actuated_coords.len()
    }

    pub fn timestep(&self) -> f64 {
        self.timestep
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn gravity(&self) -> [f64; 2] {
        self.gravity
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn geometries(&self) -> &[PressureFieldGeom] {
        &self.geometries
    }

    pub fn contact_pairs(&self) -> &[(usize, usize)] {
        &self.pair_indices
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Coordinate indices of a joint within `q` (and `v`).
    pub fn joint_coords(&self, joint: usize) -> std::ops::Range<usize> {
        let start = self.coord_start[joint];
        start..start + self.joints[joint].kind.dof()
    }

    pub fn actuated_coord_indices(&self) -> &[usize] {
        &self.actuated_coords
    }

    /// Effort limit per input slot, where declared.
    pub fn effort_limits(&self) -> Vec<Option<f64>> {
        let mut out = Vec::with_capacity(self.num_actuated());
        for (j, joint) in self.joints.iter().enumerate() {
            if joint.actuated {
                for _ in self.joint_coords(j) {
                    out.push(joint.effort_limit);
                }
            }
        }
        out
    }

    /// One name per generalized coordinate, used for CSV headers.
    pub fn coord_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.n_coords];
        for (j, joint) in self.joints.iter().enumerate() {
            let range = self.joint_coords(j);
            match joint.kind {
                JointKind::PlanarFree => {
                    let start = range.start;
                    names[start] = format!("{}_x", joint.name);
                    names[start + 1] = format!("{}_y", joint.name);
                    names[start + 2] = format!("{}_th", joint.name);
                }
                _ => names[range.start] = joint.name.clone(),
            }
        }
        names
    }

    pub fn input_names(&self) -> Vec<String> {
        let coord_names = self.coord_names();
        self.actuated_coords
            .iter()
            .map(|&c| coord_names[c].clone())
            .collect()
    }

    pub fn pair_names(&self) -> Vec<String> {
        self.pair_indices
            .iter()
            .map(|&(a, b)| format!("{}_{}", self.geometries[a].name, self.geometries[b].name))
            .collect()
    }

    /// Site carrying the named geometry.
    pub fn site(&self, geometry: &str) -> Result<SiteRef, MultibodyError> {
        self.geometries
            .iter()
            .position(|g| g.name == geometry)
            .map(|g| self.geom_sites[g])
            .ok_or_else(|| MultibodyError::UnknownSite(geometry.to_string()))
    }

    pub(crate) fn geom_site(&self, geom: usize) -> SiteRef {
        self.geom_sites[geom]
    }

    pub(crate) fn link_coord_path(&self, link: usize) -> &[usize] {
        &self.link_coord_path[link]
    }

    /// Forward kinematics, per-coordinate unit twists, and their rates.
    pub(crate) fn kinematics<T: Real>(&self, q: &[T], v: &[T]) -> KinState<T> {
        debug_assert_eq!(q.len(), self.n_coords);
        debug_assert_eq!(v.len(), self.n_coords);
        let nl = self.links.len();
        let mut kin = KinState {
            link_angle: vec![T::zero(); nl],
            link_origin: vec![[T::zero(); 2]; nl],
            link_twist: vec![[T::zero(); 3]; nl],
            coord_twist: vec![[T::zero(); 3]; self.n_coords],
            coord_twist_dot: vec![[T::zero(); 2]; self.n_coords],
        };
        for &j in &self.topo_joints {
            let joint = &self.joints[j];
            let child = self.link_index(&joint.child).expect("validated");
            let (p_angle, p_origin, p_twist) = match self.parent_link[child] {
                None => (T::zero(), [T::zero(); 2], [T::zero(); 3]),
                Some(p) => (kin.link_angle[p], kin.link_origin[p], kin.link_twist[p]),
            };
            let mount = p_angle + T::from_f64(joint.angle);
            // Anchor offset is expressed in the parent frame.
            let anchor = {
                let (s, c) = (p_angle.sin(), p_angle.cos());
                [
                    p_origin[0] + c * T::from_f64(joint.origin[0]) - s * T::from_f64(joint.origin[1]),
                    p_origin[1] + s * T::from_f64(joint.origin[0]) + c * T::from_f64(joint.origin[1]),
                ]
            };
            let c0 = self.coord_start[j];
            let omega_p = p_twist[0];
            match &joint.kind {
                JointKind::Revolute => {
                    kin.coord_twist[c0] = [T::one(), anchor[1], -anchor[0]];
                    // perp(x) = (-x_y, x_x); S.v = -perp(anchor)
                    let anchor_vel = point_velocity_of(&p_twist, &anchor);
                    kin.coord_twist_dot[c0] = [anchor_vel[1], -anchor_vel[0]];
                    kin.link_angle[child] = mount + q[c0];
                    kin.link_origin[child] = anchor;
                    kin.link_twist[child] = add_scaled(&p_twist, &kin.coord_twist[c0], v[c0]);
                }
                JointKind::Prismatic { axis } => {
                    let (s, c) = (mount.sin(), mount.cos());
                    let dir = [
                        c * T::from_f64(axis[0]) - s * T::from_f64(axis[1]),
                        s * T::from_f64(axis[0]) + c * T::from_f64(axis[1]),
                    ];
                    kin.coord_twist[c0] = [T::zero(), dir[0], dir[1]];
                    kin.coord_twist_dot[c0] = [-omega_p * dir[1], omega_p * dir[0]];
                    kin.link_angle[child] = mount;
                    kin.link_origin[child] =
                        [anchor[0] + dir[0] * q[c0], anchor[1] + dir[1] * q[c0]];
                    kin.link_twist[child] = add_scaled(&p_twist, &kin.coord_twist[c0], v[c0]);
                }
                JointKind::PlanarFree => {
                    let (s, c) = (mount.sin(), mount.cos());
                    let ex = [c, s];
                    let ey = [-s, c];
                    kin.coord_twist[c0] = [T::zero(), ex[0], ex[1]];
                    kin.coord_twist[c0 + 1] = [T::zero(), ey[0], ey[1]];
                    kin.coord_twist_dot[c0] = [-omega_p * ex[1], omega_p * ex[0]];
                    kin.coord_twist_dot[c0 + 1] = [-omega_p * ey[1], omega_p * ey[0]];
                    let origin = [
                        anchor[0] + ex[0] * q[c0] + ey[0] * q[c0 + 1],
                        anchor[1] + ex[1] * q[c0] + ey[1] * q[c0 + 1],
                    ];
                    kin.coord_twist[c0 + 2] = [T::one(), origin[1], -origin[0]];
                    kin.link_angle[child] = mount + q[c0 + 2];
                    kin.link_origin[child] = origin;
                    let mut twist = add_scaled(&p_twist, &kin.coord_twist[c0], v[c0]);
                    twist = add_scaled(&twist, &kin.coord_twist[c0 + 1], v[c0 + 1]);
                    twist = add_scaled(&twist, &kin.coord_twist[c0 + 2], v[c0 + 2]);
                    kin.link_twist[child] = twist;
                    // The rotation coordinate pivots about the (moving) child
                    // origin, so its twist rate tracks that point's velocity.
                    let origin_vel = point_velocity_of(&twist, &origin);
                    kin.coord_twist_dot[c0 + 2] = [origin_vel[1], -origin_vel[0]];
                }
            }
        }
        kin
    }

    /// World center of mass of each link.
    pub(crate) fn world_coms<T: Real>(&self, kin: &KinState<T>) -> Vec<[T; 2]> {
        self.links
            .iter()
            .enumerate()
            .map(|(i, link)| {
                let (s, c) = (kin.link_angle[i].sin(), kin.link_angle[i].cos());
                [
                    kin.link_origin[i][0] + c * T::from_f64(link.com_offset[0])
                        - s * T::from_f64(link.com_offset[1]),
                    kin.link_origin[i][1]
                        + s * T::from_f64(link.com_offset[0])
                        + c * T::from_f64(link.com_offset[1]),
                ]
            })
            .collect()
    }

    /// Joint-space mass matrix via composite-rigid-body accumulation.
    ///
    /// Row-major `n x n`; symmetric positive definite for any valid model.
    pub fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let qs: Vec<f64> = q.iter().copied().collect();
        let vs = vec![0.0; self.n_coords];
        let kin = self.kinematics(&qs, &vs);
        let flat = self.mass_matrix_from_kin(&kin);
        DMatrix::from_fn(self.n_coords, self.n_coords, |r, c| flat[r * self.n_coords + c])
    }

    pub(crate) fn mass_matrix_from_kin<T: Real>(&self, kin: &KinState<T>) -> Vec<T> {
        let n = self.n_coords;
        let coms = self.world_coms(kin);
        // Composite bodies as (mass, inertia about own com, world com):
        // planar inertia about the com is orientation-independent, so the
        // subtree accumulation only shifts first and second moments.
        let mut comp: Vec<(T, T, [T; 2])> = self
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| (T::from_f64(l.mass), T::from_f64(l.inertia), coms[i]))
            .collect();
        let mut m = vec![T::zero(); n * n];
        for &j in self.topo_joints.iter().rev() {
            let child = self.link_index(&self.joints[j].child).expect("validated");
            let (cm, ci, cc) = comp[child];
            for a in self.joint_coords(j) {
                let sa = kin.coord_twist[a];
                // F = I_composite * S_a, with I about the world origin.
                let perp_c = [-cc[1], cc[0]];
                let c_sq = cc[0] * cc[0] + cc[1] * cc[1];
                let f_torque =
                    (ci + cm * c_sq) * sa[0] + cm * (perp_c[0] * sa[1] + perp_c[1] * sa[2]);
                let f_x = cm * (perp_c[0] * sa[0] + sa[1]);
                let f_y = cm * (perp_c[1] * sa[0] + sa[2]);
                for &i in self.link_coord_path(child) {
                    let si = kin.coord_twist[i];
                    let mij = si[0] * f_torque + si[1] * f_x + si[2] * f_y;
                    m[i * n + a] = mij;
                    m[a * n + i] = mij;
                }
            }
            if let Some(p) = self.parent_link[child] {
                let (pm, pi, pc) = comp[p];
                let total = pm + cm;
                let new_c = [
                    (pm * pc[0] + cm * cc[0]) / total,
                    (pm * pc[1] + cm * cc[1]) / total,
                ];
                let dp = [pc[0] - new_c[0], pc[1] - new_c[1]];
                let dc = [cc[0] - new_c[0], cc[1] - new_c[1]];
                let new_i = pi
                    + pm * (dp[0] * dp[0] + dp[1] * dp[1])
                    + ci
                    + cm * (dc[0] * dc[0] + dc[1] * dc[1]);
                comp[p] = (total, new_i, new_c);
            }
        }
        m
    }

    /// Bias forces `C(q,v) v + g(q)`.
    ///
    /// Recursive Newton-Euler with zero generalized acceleration and no
    /// external forces: per-body required wrenches are propagated from the
    /// leaves toward the root and projected on each joint's motion subspace.
    pub fn bias_forces(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let qs: Vec<f64> = q.iter().copied().collect();
        let vs: Vec<f64> = v.iter().copied().collect();
        let kin = self.kinematics(&qs, &vs);
        DVector::from_vec(self.bias_from_kin(&kin, &vs))
    }

    pub(crate) fn bias_from_kin<T: Real>(&self, kin: &KinState<T>, v: &[T]) -> Vec<T> {
        let coms = self.world_coms(kin);
        let g = [T::from_f64(self.gravity[0]), T::from_f64(self.gravity[1])];
        // Required wrench (torque about world origin, force) per link with
        // qdd = 0. Planar bodies have no gyroscopic torque and their angular
        // acceleration vanishes when qdd = 0, so only com accelerations enter.
        let mut wrench: Vec<[T; 3]> = Vec::with_capacity(self.links.len());
        for (b, link) in self.links.iter().enumerate() {
            let twist = kin.link_twist[b];
            let omega = twist[0];
            let com = coms[b];
            let v_com = point_velocity_of(&twist, &com);
            let mut a0 = [T::zero(); 2];
            for &i in self.link_coord_path(b) {
                a0[0] += kin.coord_twist_dot[i][0] * v[i];
                a0[1] += kin.coord_twist_dot[i][1] * v[i];
            }
            let a_com = [a0[0] - omega * v_com[1], a0[1] + omega * v_com[0]];
            let mass = T::from_f64(link.mass);
            let f = [mass * (a_com[0] - g[0]), mass * (a_com[1] - g[1])];
            let torque = com[0] * f[1] - com[1] * f[0];
            wrench.push([torque, f[0], f[1]]);
        }
        let mut bias = vec![T::zero(); self.n_coords];
        for &j in self.topo_joints.iter().rev() {
            let child = self.link_index(&self.joints[j].child).expect("validated");
            let w = wrench[child];
            for i in self.joint_coords(j) {
                let s = kin.coord_twist[i];
                bias[i] = s[0] * w[0] + s[1] * w[1] + s[2] * w[2];
            }
            if let Some(p) = self.parent_link[child] {
                wrench[p][0] += w[0];
                wrench[p][1] += w[1];
                wrench[p][2] += w[2];
            }
        }
        bias
    }

    /// Position, velocity, and 2 x n Jacobian of a collision site.
    pub fn site_kinematics(
        &self,
        x: &GeneralizedState,
        site: &SiteRef,
    ) -> (Vector2<f64>, Vector2<f64>, DMatrix<f64>) {
        let qs: Vec<f64> = x.q.iter().copied().collect();
        let vs: Vec<f64> = x.v.iter().copied().collect();
        let kin = self.kinematics(&qs, &vs);
        let pos = kin.site_position(site);
        let vel = match site.link {
            None => [0.0, 0.0],
            Some(b) => point_velocity_of(&kin.link_twist[b], &pos),
        };
        let mut jac = DMatrix::zeros(2, self.n_coords);
        if let Some(b) = site.link {
            for &i in self.link_coord_path(b) {
                let s = kin.coord_twist[i];
                jac[(0, i)] = s[1] - s[0] * pos[1];
                jac[(1, i)] = s[2] + s[0] * pos[0];
            }
        }
        (Vector2::new(pos[0], pos[1]), Vector2::new(vel[0], vel[1]), jac)
    }

    /// Same as [`Self::site_kinematics`], addressed by geometry name.
    pub fn site_kinematics_by_name(
        &self,
        x: &GeneralizedState,
        geometry: &str,
    ) -> Result<(Vector2<f64>, Vector2<f64>, DMatrix<f64>), MultibodyError> {
        let site = self.site(geometry)?;
        Ok(self.site_kinematics(x, &site))
    }

    /// One discrete dynamics step `x_{k+1} = f(x_k, u_k)`.
    pub fn step(
        &self,
        x: &GeneralizedState,
        u: &ControlInput,
    ) -> Result<GeneralizedState, MultibodyError> {
        assert_eq!(x.q.len(), self.n_coords, "state dimension mismatch");
        assert_eq!(u.tau.len(), self.num_actuated(), "input dimension mismatch");
        let q: Vec<f64> = x.q.iter().copied().collect();
        let v: Vec<f64> = x.v.iter().copied().collect();
        let tau: Vec<f64> = u.tau.iter().copied().collect();
        let (q1, v1) = self.step_generic(&q, &v, &tau)?;
        Ok(GeneralizedState {
            q: DVector::from_vec(q1),
            v: DVector::from_vec(v1),
        })
    }

    /// Scalar-generic step: each substep evaluates contact at its pre-step
    /// state, updates velocities, then advances positions with the updated
    /// velocities.
    pub fn step_generic<T: Real>(
        &self,
        q: &[T],
        v: &[T],
        tau: &[T],
    ) -> Result<(Vec<T>, Vec<T>), MultibodyError> {
        let n = self.n_coords;
        let h = T::from_f64(self.timestep / self.substeps as f64);
        let mut q = q.to_vec();
        let mut v = v.to_vec();
        for substep in 0..self.substeps {
            let kin = self.kinematics(&q, &v);
            let mut rhs = vec![T::zero(); n];
            hydro_contact::accumulate_contact_forces(self, &kin, &mut rhs);
            let bias = self.bias_from_kin(&kin, &v);
            for i in 0..n {
                rhs[i] -= bias[i];
            }
            for (slot, &coord) in self.actuated_coords.iter().enumerate() {
                rhs[coord] += tau[slot];
            }
            let m = self.mass_matrix_from_kin(&kin);
            let dv = cholesky_solve(m, rhs, n);
            for i in 0..n {
                v[i] += h * dv[i];
                q[i] += h * v[i];
            }
            let ok = q.iter().chain(v.iter()).all(|x| {
                let p = x.primal();
                p.is_finite() && p.abs() < 1e12
            });
            if !ok {
                return Err(MultibodyError::IntegrationDiverged { substep });
            }
        }
        Ok((q, v))
    }

    /// Kinetic plus potential energy; handy for integrator audits.
    pub fn mechanical_energy(&self, x: &GeneralizedState) -> f64 {
        let m = self.mass_matrix(&x.q);
        let kinetic = 0.5 * (x.v.transpose() * &m * &x.v)[(0, 0)];
        let qs: Vec<f64> = x.q.iter().copied().collect();
        let vs = vec![0.0; self.n_coords];
        let kin = self.kinematics(&qs, &vs);
        let coms = self.world_coms(&kin);
        let potential: f64 = self
            .links
            .iter()
            .zip(coms.iter())
            .map(|(l, c)| -l.mass * (self.gravity[0] * c[0] + self.gravity[1] * c[1]))
            .sum();
        kinetic + potential
    }

    /// Contact wrenches and their generalized-force projection at a state.
    pub fn contact_forces(
        &self,
        x: &GeneralizedState,
    ) -> (Vec<ContactWrench>, DVector<f64>) {
        hydro_contact::total_contact_forces(self, x)
    }
}

/// Kinematic snapshot shared by the mass matrix, bias, and contact passes.
pub(crate) struct KinState<T> {
    pub link_angle: Vec<T>,
    pub link_origin: Vec<[T; 2]>,
    /// Planar twist (omega, vx, vy) of each link, reduced at the world origin.
    pub link_twist: Vec<[T; 3]>,
    /// Unit twist of each generalized coordinate.
    pub coord_twist: Vec<[T; 3]>,
    /// Time derivative of each unit twist (linear part; angular part is zero
    /// for planar trees).
    pub coord_twist_dot: Vec<[T; 2]>,
}

impl<T: Real> KinState<T> {
    pub fn site_position(&self, site: &SiteRef) -> [T; 2] {
        match site.link {
            None => [T::from_f64(site.offset[0]), T::from_f64(site.offset[1])],
            Some(b) => {
                let (s, c) = (self.link_angle[b].sin(), self.link_angle[b].cos());
                [
                    self.link_origin[b][0] + c * T::from_f64(site.offset[0])
                        - s * T::from_f64(site.offset[1]),
                    self.link_origin[b][1]
                        + s * T::from_f64(site.offset[0])
                        + c * T::from_f64(site.offset[1]),
                ]
            }
        }
    }

    pub fn site_angle(&self, site: &SiteRef) -> T {
        match site.link {
            None => T::zero(),
            Some(b) => self.link_angle[b],
        }
    }

    /// Velocity of the material point of `site`'s body at world point `p`.
    pub fn point_velocity(&self, site: &SiteRef, p: &[T; 2]) -> [T; 2] {
        match site.link {
            None => [T::zero(), T::zero()],
            Some(b) => point_velocity_of(&self.link_twist[b], p),
        }
    }
}

/// Velocity of a body's material point at world position `p`, given the body
/// twist reduced at the world origin.
#[inline]
pub(crate) fn point_velocity_of<T: Real>(twist: &[T; 3], p: &[T; 2]) -> [T; 2] {
    [twist[1] - twist[0] * p[1], twist[2] + twist[0] * p[0]]
}

#[inline]
fn add_scaled<T: Real>(a: &[T; 3], b: &[T; 3], s: T) -> [T; 3] {
    [a[0] + b[0] * s, a[1] + b[1] * s, a[2] + b[2] * s]
}

/// Applies a force at a world point on a link as generalized forces.
pub(crate) fn apply_point_force<T: Real>(
    model: &MultibodyModel,
    kin: &KinState<T>,
    site: &SiteRef,
    point: &[T; 2],
    force: &[T; 2],
    out: &mut [T],
) {
    if let Some(b) = site.link {
        for &i in model.link_coord_path(b) {
            let s = kin.coord_twist[i];
            let jx = s[1] - s[0] * point[1];
            let jy = s[2] + s[0] * point[0];
            out[i] += jx * force[0] + jy * force[1];
        }
    }
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major, n x n)
/// by an in-place Cholesky factorization, generic over the scalar.
pub(crate) fn cholesky_solve<T: Real>(mut a: Vec<T>, mut b: Vec<T>, n: usize) -> Vec<T> {
    for k in 0..n {
        let mut d = a[k * n + k];
        for j in 0..k {
            let l = a[k * n + j];
            d -= l * l;
        }
        let d = d.sqrt();
        a[k * n + k] = d;
        for i in k + 1..n {
            let mut s = a[i * n + k];
            for j in 0..k {
                s -= a[i * n + j] * a[k * n + j];
            }
            a[i * n + k] = s / d;
        }
    }
    // L y = b
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= a[i * n + j] * b[j];
        }
        b[i] = s / a[i * n + i];
    }
    // L^T x = y
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= a[j * n + i] * b[j];
        }
        b[i] = s / a[i * n + i];
    }
    b
}
