//! JSON documents (models, scenarios, gains, sequences, posture problems and
//! solutions) and the trace CSV.
//!
//! Loaders check invariants and report the offending field by path, e.g.
//! `contacts[2].mu`, together with the line it sits on. Relative paths inside a
//! document resolve against the document's directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::control::{ControllerGains, Posture};
use crate::coupled::{assemble, Body, ContactKind, ContactSpec, CoupledSystem, GraspLimits, PayloadModel, SurfaceGeometry};
use crate::ergonomics::{closure_violation, optimize_posture, placed_state, project_closure, PostureProblem, PostureSolution, Stance};
use crate::error::{ErgonomicsError, Error};
use crate::model::{AgentModel, JointKind, JointLimits, LinkSpec};
use crate::sim::{Phase, Scenario, Sequence, SimTrace};
use crate::spatial::{FramePose, Mat3, Mat6, SpatialInertia, Vec3, Vec6};

/// Closure error accepted in a scenario's initial state.
const CLOSURE_TOL: f64 = 1e-8;

// ---------------------------------------------------------------------------
// reading, writing, error location

pub fn read_text(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    }
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Other(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

fn parse<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, Error> {
    serde_json::from_str(text).map_err(|e| Error::Parse { path: path.to_path_buf(), line: e.line(), column: e.column(), msg: e.to_string() })
}

/// A document with its source, for field-addressed errors.
struct Doc<'a> {
    path: &'a Path,
    text: &'a str,
}

impl Doc<'_> {
    fn invalid(&self, field: impl Into<String>, msg: impl Into<String>) -> Error {
        let field = field.into();
        Error::Invariant { path: self.path.to_path_buf(), line: locate(self.text, &field), field, msg: msg.into() }
    }

    fn resolve(&self, rel: &str) -> PathBuf {
        self.path.parent().unwrap_or(Path::new(".")).join(rel)
    }
}

enum Segment<'a> {
    Key(&'a str),
    Index(usize),
}

fn segments(field: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    for part in field.split('.') {
        let (key, rest) = part.split_once('[').map_or((part, ""), |(k, r)| (k, r));
        if !key.is_empty() {
            out.push(Segment::Key(key));
        }
        for idx in rest.split('[') {
            if let Ok(i) = idx.trim_end_matches(']').parse() {
                out.push(Segment::Index(i));
            }
        }
    }
    out
}

/// 1-based line of `field` in `text`, or of its deepest enclosing value that exists.
pub fn locate(text: &str, field: &str) -> usize {
    let mut cur = Cursor { s: text.as_bytes(), i: 0 };
    let offset = cur.find(&segments(field));
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Just enough of a JSON scanner to walk a document that already parsed.
struct Cursor<'a> {
    s: &'a [u8],
    i: usize,
}

impl Cursor<'_> {
    fn ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn peek(&self) -> u8 {
        self.s.get(self.i).copied().unwrap_or(0)
    }

    fn string(&mut self) -> &str {
        let start = self.i + 1;
        self.i += 1;
        while self.i < self.s.len() && self.s[self.i] != b'"' {
            self.i += if self.s[self.i] == b'\\' { 2 } else { 1 };
        }
        self.i += 1;
        std::str::from_utf8(&self.s[start..self.i - 1]).unwrap_or("")
    }

    fn skip(&mut self) {
        self.ws();
        match self.peek() {
            b'"' => {
                self.string();
            }
            b'{' | b'[' => {
                let mut depth = 0;
                while self.i < self.s.len() {
                    match self.s[self.i] {
                        b'"' => {
                            self.string();
                            continue;
                        }
                        b'{' | b'[' => depth += 1,
                        b'}' | b']' => {
                            depth -= 1;
                            if depth == 0 {
                                self.i += 1;
                                return;
                            }
                        }
                        _ => {}
                    }
                    self.i += 1;
                }
            }
            _ => {
                while self.i < self.s.len() && !matches!(self.s[self.i], b',' | b'}' | b']') {
                    self.i += 1;
                }
            }
        }
    }

    /// Byte offset of the value at `path` (or of the deepest prefix found).
    fn find(&mut self, path: &[Segment]) -> usize {
        self.ws();
        let here = self.i;
        let Some(first) = path.first() else { return here };
        match (first, self.peek()) {
            (Segment::Key(key), b'{') => {
                self.i += 1;
                loop {
                    self.ws();
                    if self.peek() != b'"' {
                        return here;
                    }
                    let key_at = self.i;
                    let k = self.string().to_owned();
                    self.ws();
                    self.i += 1; // ':'
                    if k == *key {
                        let found = self.find(&path[1..]);
                        return if path.len() == 1 { key_at } else { found };
                    }
                    self.skip();
                    self.ws();
                    if self.peek() != b',' {
                        return here;
                    }
                    self.i += 1;
                }
            }
            (Segment::Index(n), b'[') => {
                self.i += 1;
                for k in 0.. {
                    self.ws();
                    if self.peek() == b']' {
                        return here;
                    }
                    if k == *n {
                        return self.find(&path[1..]);
                    }
                    self.skip();
                    self.ws();
                    if self.peek() != b',' {
                        return here;
                    }
                    self.i += 1;
                }
                here
            }
            _ => here,
        }
    }
}

// ---------------------------------------------------------------------------
// shared pieces

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl PoseFile {
    pub fn pose(&self) -> FramePose {
        FramePose::from_xyz_rpy(self.xyz, self.rpy)
    }
}

impl From<&FramePose> for PoseFile {
    fn from(p: &FramePose) -> Self {
        let (xyz, rpy) = p.xyz_rpy();
        PoseFile { xyz, rpy }
    }
}

impl Default for PoseFile {
    fn default() -> Self {
        PoseFile { xyz: [0.0; 3], rpy: [0.0; 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InertiaFile {
    pub mass: f64,
    #[serde(default)]
    pub com: [f64; 3],
    pub ixx: f64,
    pub iyy: f64,
    pub izz: f64,
    #[serde(default)]
    pub ixy: f64,
    #[serde(default)]
    pub ixz: f64,
    #[serde(default)]
    pub iyz: f64,
}

impl InertiaFile {
    fn matrix(&self) -> Mat3 {
        Mat3::new(self.ixx, self.ixy, self.ixz, self.ixy, self.iyy, self.iyz, self.ixz, self.iyz, self.izz)
    }

    fn from_parts(mass: f64, com: Vec3, i: &Mat3) -> Self {
        InertiaFile { mass, com: com.into(), ixx: i[(0, 0)], iyy: i[(1, 1)], izz: i[(2, 2)], ixy: i[(0, 1)], ixz: i[(0, 2)], iyz: i[(1, 2)] }
    }
}

fn positive(doc: &Doc, field: &str, x: f64) -> Result<(), Error> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(doc.invalid(field, format!("must be positive, got {x}")))
    }
}

fn non_negative(doc: &Doc, field: &str, x: f64) -> Result<(), Error> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(doc.invalid(field, format!("must be non-negative, got {x}")))
    }
}

// ---------------------------------------------------------------------------
// agent models

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointFile {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<[f64; 3]>,
    #[serde(default)]
    pub origin: PoseFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkFile {
    pub name: String,
    #[serde(default)]
    pub parent: Option<String>,
    pub joint: JointFile,
    pub inertia: InertiaFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsFile {
    pub position: Vec<[f64; 2]>,
    pub torque: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub name: String,
    pub links: Vec<LinkFile>,
    pub limits: LimitsFile,
}

impl From<&AgentModel> for ModelFile {
    fn from(m: &AgentModel) -> Self {
        let links = m
            .links()
            .iter()
            .map(|l| LinkFile {
                name: l.name.clone(),
                parent: l.parent.map(|p| m.links()[p].name.clone()),
                joint: match &l.joint {
                    JointKind::Revolute { axis } => JointFile { kind: "revolute".into(), axis: Some((*axis).into()), origin: (&l.origin).into() },
                    JointKind::Fixed => JointFile { kind: "fixed".into(), axis: None, origin: (&l.origin).into() },
                },
                inertia: InertiaFile::from_parts(l.inertia.mass, l.inertia.com, &l.inertia.inertia),
            })
            .collect();
        let limits = LimitsFile { position: m.limits().position.iter().map(|&(a, b)| [a, b]).collect(), torque: m.limits().torque.clone() };
        ModelFile { name: m.name().into(), links, limits }
    }
}

fn build_model(doc: &Doc, file: &ModelFile) -> Result<AgentModel, Error> {
    let mut links: Vec<LinkSpec> = Vec::with_capacity(file.links.len());
    for (i, l) in file.links.iter().enumerate() {
        let at = |f: &str| format!("links[{i}].{f}");
        let parent = match &l.parent {
            None if i == 0 => None,
            None => return Err(doc.invalid(at("parent"), "only the first link may omit its parent")),
            Some(_) if i == 0 => return Err(doc.invalid(at("parent"), "the base link must not have a parent")),
            Some(p) => Some(links.iter().position(|x| &x.name == p).ok_or_else(|| doc.invalid(at("parent"), format!("`{p}` is not defined before this link")))?),
        };
        if links.iter().any(|x| x.name == l.name) {
            return Err(doc.invalid(at("name"), format!("duplicate link name `{}`", l.name)));
        }
        let joint = match (l.joint.kind.as_str(), l.joint.axis) {
            ("fixed", None) => JointKind::Fixed,
            ("fixed", Some(_)) => return Err(doc.invalid(at("joint.axis"), "fixed joints take no axis")),
            ("revolute", Some(a)) => {
                let axis = Vec3::from(a);
                if (axis.norm() - 1.0).abs() > 1e-6 {
                    return Err(doc.invalid(at("joint.axis"), format!("axis must be a unit vector, norm is {}", axis.norm())));
                }
                JointKind::Revolute { axis: axis.normalize() }
            }
            ("revolute", None) => return Err(doc.invalid(at("joint.axis"), "revolute joints need an axis")),
            (k, _) => return Err(doc.invalid(at("joint.type"), format!("unknown joint type `{k}` (expected `fixed` or `revolute`)"))),
        };
        let inertia = SpatialInertia::new(l.inertia.mass, Vec3::from(l.inertia.com), l.inertia.matrix());
        inertia.validate().map_err(|e| doc.invalid(at("inertia"), e.to_string()))?;
        links.push(LinkSpec { name: l.name.clone(), parent, joint, origin: l.joint.origin.pose(), inertia });
    }
    let n = links.iter().filter(|l| l.joint != JointKind::Fixed).count();
    if file.limits.position.len() != n {
        return Err(doc.invalid("limits.position", format!("{} entries for {n} joints", file.limits.position.len())));
    }
    if file.limits.torque.len() != n {
        return Err(doc.invalid("limits.torque", format!("{} entries for {n} joints", file.limits.torque.len())));
    }
    for (k, [lo, hi]) in file.limits.position.iter().enumerate() {
        if !(lo < hi) {
            return Err(doc.invalid(format!("limits.position[{k}]"), format!("lower limit {lo} is not below upper {hi}")));
        }
    }
    for (k, t) in file.limits.torque.iter().enumerate() {
        positive(doc, &format!("limits.torque[{k}]"), *t)?;
    }
    let limits = JointLimits { position: file.limits.position.iter().map(|[a, b]| (*a, *b)).collect(), torque: file.limits.torque.clone() };
    AgentModel::new(file.name.clone(), links, limits).map_err(|e| doc.invalid("links", e.to_string()))
}

pub fn load_model(path: &Path) -> Result<AgentModel, Error> {
    let text = read_text(path)?;
    let file: ModelFile = parse(path, &text)?;
    build_model(&Doc { path, text: &text }, &file)
}

// ---------------------------------------------------------------------------
// scenarios

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorFile {
    pub frame: String,
    #[serde(flatten)]
    pub pose: PoseFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentFile {
    /// Model document, relative to the scenario.
    pub model: String,
    /// Foot frame and its world pose; fixes the base.
    pub anchor: AnchorFile,
    pub joints: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedFrame {
    pub name: String,
    #[serde(flatten)]
    pub pose: PoseFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayloadFile {
    pub mass: f64,
    pub inertia: InertiaFile,
    pub pose: PoseFile,
    pub frames: Vec<NamedFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContactFile {
    Surface { agent: usize, frame: String, half_x: f64, half_y: f64, mu: f64, torsion_mu: f64 },
    Grasp { agent: usize, frame: String, payload_frame: String, max_force: f64, max_moment: f64 },
    Fixture { payload_frame: String, half_x: f64, half_y: f64, mu: f64, torsion_mu: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    pub agents: Vec<AgentFile>,
    #[serde(default)]
    pub payload: Option<PayloadFile>,
    pub contacts: Vec<ContactFile>,
}

fn default_gravity() -> f64 {
    9.81
}

impl ScenarioFile {
    /// Document for `scenario`, with its agents' models stored at `model_paths`.
    pub fn new(scenario: &Scenario, model_paths: &[String]) -> Self {
        let sys = &scenario.system;
        let agents = sys
            .agents()
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let (frame, pose) = &scenario.stance.feet[i][0];
                AgentFile {
                    model: model_paths[i].clone(),
                    anchor: AnchorFile { frame: frame.clone(), pose: pose.into() },
                    joints: scenario.initial.agents[i].joints.iter().copied().collect(),
                }
            })
            .collect();
        let payload = sys.payload().map(|p| PayloadFile {
            mass: p.mass,
            inertia: InertiaFile::from_parts(p.mass, Vec3::zeros(), &p.inertia),
            pose: (&scenario.initial.payload.as_ref().expect("payload state").pose).into(),
            frames: p.frames.iter().map(|(n, f)| NamedFrame { name: n.clone(), pose: f.into() }).collect(),
        });
        let contacts = sys
            .slots()
            .iter()
            .map(|s| {
                let c = &s.contact;
                match (&c.body, &c.kind) {
                    (Body::Agent(a), ContactKind::Surface(g)) => {
                        ContactFile::Surface { agent: *a, frame: c.frame.clone(), half_x: g.half_x, half_y: g.half_y, mu: g.mu, torsion_mu: g.torsion_mu }
                    }
                    (Body::Agent(a), ContactKind::Grasp { payload_frame, limits }) => ContactFile::Grasp {
                        agent: *a,
                        frame: c.frame.clone(),
                        payload_frame: payload_frame.clone(),
                        max_force: limits.max_force,
                        max_moment: limits.max_moment,
                    },
                    (Body::Payload, ContactKind::Surface(g)) => {
                        ContactFile::Fixture { payload_frame: c.frame.clone(), half_x: g.half_x, half_y: g.half_y, mu: g.mu, torsion_mu: g.torsion_mu }
                    }
                    (Body::Payload, ContactKind::Grasp { .. }) => unreachable!("payloads do not grasp"),
                }
            })
            .collect();
        ScenarioFile { name: scenario.name.clone(), gravity: sys.gravity(), agents, payload, contacts }
    }
}

fn surface(doc: &Doc, at: &str, half_x: f64, half_y: f64, mu: f64, torsion_mu: f64) -> Result<SurfaceGeometry, Error> {
    positive(doc, &format!("{at}.half_x"), half_x)?;
    positive(doc, &format!("{at}.half_y"), half_y)?;
    non_negative(doc, &format!("{at}.mu"), mu)?;
    non_negative(doc, &format!("{at}.torsion_mu"), torsion_mu)?;
    Ok(SurfaceGeometry { half_x, half_y, mu, torsion_mu })
}

fn build_scenario(doc: &Doc, file: &ScenarioFile) -> Result<Scenario, Error> {
    positive(doc, "gravity", file.gravity)?;
    if file.agents.is_empty() {
        return Err(doc.invalid("agents", "at least one agent is required"));
    }
    let mut models = Vec::new();
    for (i, a) in file.agents.iter().enumerate() {
        let model = load_model(&doc.resolve(&a.model))?;
        if a.joints.len() != model.num_joints() {
            return Err(doc.invalid(format!("agents[{i}].joints"), format!("{} values for {} joints", a.joints.len(), model.num_joints())));
        }
        if !model.within_limits(&DVector::from_column_slice(&a.joints)) {
            return Err(doc.invalid(format!("agents[{i}].joints"), "outside the joint limits"));
        }
        model.frame_index(&a.anchor.frame).map_err(|e| doc.invalid(format!("agents[{i}].anchor.frame"), e.to_string()))?;
        models.push(model);
    }
    let payload = match &file.payload {
        None => None,
        Some(p) => {
            positive(doc, "payload.mass", p.mass)?;
            if (p.inertia.mass - p.mass).abs() > 0.0 || p.inertia.com != [0.0; 3] {
                return Err(doc.invalid("payload.inertia", "payload inertia is about its CoM: mass must equal `payload.mass` and com must be zero"));
            }
            let frames = p.frames.iter().map(|f| (f.name.clone(), f.pose.pose())).collect();
            Some(PayloadModel::new(p.mass, p.inertia.matrix(), frames).map_err(|e| doc.invalid("payload", e.to_string()))?)
        }
    };
    let mut contacts = Vec::new();
    for (i, c) in file.contacts.iter().enumerate() {
        let at = format!("contacts[{i}]");
        let check_agent = |a: usize, frame: &str| -> Result<(), Error> {
            let m = models.get(a).ok_or_else(|| doc.invalid(format!("{at}.agent"), format!("no agent {a}")))?;
            m.frame_index(frame).map(|_| ()).map_err(|e| doc.invalid(format!("{at}.frame"), e.to_string()))
        };
        let check_payload = |frame: &str| -> Result<(), Error> {
            let p = payload.as_ref().ok_or_else(|| doc.invalid(format!("{at}.payload_frame"), "scenario has no payload"))?;
            p.frame(frame).map(|_| ()).map_err(|e| doc.invalid(format!("{at}.payload_frame"), e.to_string()))
        };
        contacts.push(match c {
            ContactFile::Surface { agent, frame, half_x, half_y, mu, torsion_mu } => {
                check_agent(*agent, frame)?;
                ContactSpec::surface(*agent, frame, surface(doc, &at, *half_x, *half_y, *mu, *torsion_mu)?)
            }
            ContactFile::Grasp { agent, frame, payload_frame, max_force, max_moment } => {
                check_agent(*agent, frame)?;
                check_payload(payload_frame)?;
                positive(doc, &format!("{at}.max_force"), *max_force)?;
                positive(doc, &format!("{at}.max_moment"), *max_moment)?;
                ContactSpec::grasp(*agent, frame, payload_frame, GraspLimits { max_force: *max_force, max_moment: *max_moment })
            }
            ContactFile::Fixture { payload_frame, half_x, half_y, mu, torsion_mu } => {
                check_payload(payload_frame)?;
                ContactSpec::fixture(payload_frame, surface(doc, &at, *half_x, *half_y, *mu, *torsion_mu)?)
            }
        });
    }
    let system = assemble(models, payload, contacts, file.gravity).map_err(|e| doc.invalid("contacts", e.to_string()))?;
    let stance = Stance { feet: file.agents.iter().map(|a| vec![(a.anchor.frame.clone(), a.anchor.pose.pose())]).collect() };
    let joints: Vec<DVector<f64>> = file.agents.iter().map(|a| DVector::from_column_slice(&a.joints)).collect();
    let initial = placed_state(&system, &stance, &joints, file.payload.as_ref().map(|p| p.pose.pose()));
    let anchors = system.environment_anchors(&initial);
    let err = system.closure_error(&initial, &anchors).amax().max(closure_violation(&system, &stance, &initial));
    if err > CLOSURE_TOL {
        return Err(doc.invalid("agents", format!("initial joints violate the contact closure by {err:.3e}")));
    }
    Ok(Scenario { name: file.name.clone(), system, stance, initial })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, Error> {
    let text = read_text(path)?;
    let file: ScenarioFile = parse(path, &text)?;
    build_scenario(&Doc { path, text: &text }, &file)
}

// ---------------------------------------------------------------------------
// gains

/// A gain matrix: a scalar times identity, a diagonal, or a full matrix (rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainFile {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl GainFile {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let off_diagonal = (0..n).any(|i| (0..n).any(|j| i != j && m[(i, j)] != 0.0));
        if off_diagonal {
            GainFile::Full(m.row_iter().map(|r| r.iter().copied().collect()).collect())
        } else if (1..n).all(|i| m[(i, i)] == m[(0, 0)]) {
            GainFile::Scalar(m[(0, 0)])
        } else {
            GainFile::Diagonal(m.diagonal().iter().copied().collect())
        }
    }

    fn matrix(&self, doc: &Doc, field: &str, n: usize) -> Result<DMatrix<f64>, Error> {
        let m = match self {
            GainFile::Scalar(k) => DMatrix::identity(n, n) * *k,
            GainFile::Diagonal(d) if d.len() == n => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
            GainFile::Full(rows) if rows.len() == n && rows.iter().all(|r| r.len() == n) => DMatrix::from_fn(n, n, |i, j| rows[i][j]),
            _ => return Err(doc.invalid(field, format!("expected a scalar, {n} diagonal entries or a {n}×{n} matrix"))),
        };
        Ok(m)
    }

    fn spd(&self, doc: &Doc, field: &str, n: usize) -> Result<DMatrix<f64>, Error> {
        let m = self.matrix(doc, field, n)?;
        if (&m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) || m.clone().cholesky().is_none() {
            return Err(doc.invalid(field, "must be symmetric positive definite"));
        }
        Ok(m)
    }

    fn psd(&self, doc: &Doc, field: &str, n: usize) -> Result<DMatrix<f64>, Error> {
        let m = self.matrix(doc, field, n)?;
        let sym = (&m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0);
        if !sym || m.clone().symmetric_eigen().eigenvalues.min() < -1e-12 {
            return Err(doc.invalid(field, "must be symmetric positive semi-definite"));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsFile {
    pub momentum_kp: Vec<GainFile>,
    pub total_kp: GainFile,
    #[serde(default)]
    pub com_ki: Option<Vec<f64>>,
    #[serde(default)]
    pub total_com_ki: f64,
    pub payload_kp: GainFile,
    pub payload_kd: GainFile,
    pub postural_kp: Vec<GainFile>,
    pub postural_kd: Vec<GainFile>,
    pub effort: Vec<f64>,
    #[serde(default = "default_regularization")]
    pub regularization: f64,
}

fn default_regularization() -> f64 {
    1e-6
}

impl From<&ControllerGains> for GainsFile {
    fn from(g: &ControllerGains) -> Self {
        let m6 = |m: &Mat6| GainFile::from_matrix(&DMatrix::from_column_slice(6, 6, m.as_slice()));
        let d6 = |v: &Vec6| GainFile::from_matrix(&DMatrix::from_diagonal(&DVector::from_column_slice(v.as_slice())));
        GainsFile {
            momentum_kp: g.momentum_kp.iter().map(m6).collect(),
            total_kp: m6(&g.total_kp),
            com_ki: Some(g.com_ki.clone()),
            total_com_ki: g.total_com_ki,
            payload_kp: d6(&g.payload_kp),
            payload_kd: d6(&g.payload_kd),
            postural_kp: g.postural_kp.iter().map(GainFile::from_matrix).collect(),
            postural_kd: g.postural_kd.iter().map(GainFile::from_matrix).collect(),
            effort: g.effort.clone(),
            regularization: g.regularization,
        }
    }
}

fn build_gains(doc: &Doc, file: &GainsFile, system: &CoupledSystem) -> Result<ControllerGains, Error> {
    let na = system.agents().len();
    for (field, len) in [("momentum_kp", file.momentum_kp.len()), ("postural_kp", file.postural_kp.len()), ("postural_kd", file.postural_kd.len()), ("effort", file.effort.len())] {
        if len != na {
            return Err(doc.invalid(field, format!("{len} entries for {na} agents")));
        }
    }
    let to6 = |m: DMatrix<f64>| Mat6::from_column_slice(m.as_slice());
    let mut momentum_kp = Vec::new();
    let mut postural_kp = Vec::new();
    let mut postural_kd = Vec::new();
    for i in 0..na {
        let n = system.agents()[i].num_joints();
        momentum_kp.push(to6(file.momentum_kp[i].spd(doc, &format!("momentum_kp[{i}]"), 6)?));
        postural_kp.push(file.postural_kp[i].psd(doc, &format!("postural_kp[{i}]"), n)?);
        postural_kd.push(file.postural_kd[i].psd(doc, &format!("postural_kd[{i}]"), n)?);
        positive(doc, &format!("effort[{i}]"), file.effort[i])?;
    }
    let diag6 = |g: &GainFile, field: &str| -> Result<Vec6, Error> {
        let m = g.matrix(doc, field, 6)?;
        if (0..6).any(|i| (0..6).any(|j| i != j && m[(i, j)] != 0.0)) || m.diagonal().min() <= 0.0 {
            return Err(doc.invalid(field, "must be diagonal with positive entries"));
        }
        Ok(Vec6::from_column_slice(m.diagonal().as_slice()))
    };
    let com_ki = file.com_ki.clone().unwrap_or_else(|| vec![0.0; na]);
    if com_ki.len() != na {
        return Err(doc.invalid("com_ki", format!("{} entries for {na} agents", com_ki.len())));
    }
    for (i, k) in com_ki.iter().enumerate() {
        non_negative(doc, &format!("com_ki[{i}]"), *k)?;
    }
    non_negative(doc, "total_com_ki", file.total_com_ki)?;
    positive(doc, "regularization", file.regularization)?;
    let gains = ControllerGains {
        momentum_kp,
        total_kp: to6(file.total_kp.spd(doc, "total_kp", 6)?),
        com_ki,
        total_com_ki: file.total_com_ki,
        payload_kp: diag6(&file.payload_kp, "payload_kp")?,
        payload_kd: diag6(&file.payload_kd, "payload_kd")?,
        postural_kp,
        postural_kd,
        effort: file.effort.clone(),
        regularization: file.regularization,
    };
    gains.validate(system).map_err(|e| doc.invalid("", e.to_string()))?;
    Ok(gains)
}

pub fn load_gains(path: &Path, system: &CoupledSystem) -> Result<ControllerGains, Error> {
    let text = read_text(path)?;
    let file: GainsFile = parse(path, &text)?;
    build_gains(&Doc { path, text: &text }, &file, system)
}

// ---------------------------------------------------------------------------
// posture problems and solutions

/// How a posture's joints are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JointsSpec {
    /// `"carry"`: the previous joints projected onto the new payload pose;
    /// `"optimize"`: the effort-optimal posture for that pose.
    Keyword(String),
    Explicit(Vec<Vec<f64>>),
    Solution { solution: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    /// Scenario document, relative to the problem.
    pub scenario: String,
    #[serde(default)]
    pub payload_target: Option<PoseFile>,
    pub effort: Vec<f64>,
    #[serde(default = "default_guess")]
    pub initial_guess: JointsSpec,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_gradient_tolerance")]
    pub gradient_tolerance: f64,
}

fn default_guess() -> JointsSpec {
    JointsSpec::Keyword("carry".into())
}

fn default_iterations() -> usize {
    200
}

fn default_gradient_tolerance() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionFile {
    pub scenario: String,
    #[serde(default)]
    pub payload: Option<PoseFile>,
    pub joints: Vec<Vec<f64>>,
    /// Per-agent joint torques at the static optimum.
    pub torques: Vec<Vec<f64>>,
    pub torque_norms: Vec<f64>,
    pub wrenches: Vec<f64>,
    pub objective: f64,
    pub initial_objective: f64,
    /// `1 − objective / initial_objective`.
    pub improvement: f64,
    pub iterations: usize,
    pub converged: bool,
    pub constraint_violation: f64,
    pub projected_gradient: f64,
}

impl SolutionFile {
    pub fn new(scenario: &str, system: &CoupledSystem, payload: Option<&FramePose>, s: &PostureSolution) -> Self {
        let torques: Vec<Vec<f64>> = system
            .agents()
            .iter()
            .enumerate()
            .map(|(i, m)| s.torques.rows(system.torque_offset(i), m.num_joints()).iter().copied().collect())
            .collect();
        SolutionFile {
            scenario: scenario.into(),
            payload: payload.map(PoseFile::from),
            joints: s.joints.iter().map(|q| q.iter().copied().collect()).collect(),
            torque_norms: torques.iter().map(|t| t.iter().map(|x| x * x).sum::<f64>().sqrt()).collect(),
            torques,
            wrenches: s.wrenches.iter().copied().collect(),
            objective: s.objective,
            initial_objective: s.initial_objective,
            improvement: if s.initial_objective > 0.0 { 1.0 - s.objective / s.initial_objective } else { 0.0 },
            iterations: s.iterations,
            converged: s.converged,
            constraint_violation: s.constraint_violation,
            projected_gradient: s.projected_gradient,
        }
    }

    pub fn posture(&self) -> Posture {
        Posture { joints: self.joints.iter().map(|q| DVector::from_column_slice(q)).collect(), payload: self.payload.map(|p| p.pose()) }
    }
}

pub fn load_solution(path: &Path) -> Result<SolutionFile, Error> {
    let text = read_text(path)?;
    parse(path, &text)
}

/// Joints for `spec` reached from `from` with the payload at `payload`.
fn resolve_joints(doc: &Doc, field: &str, spec: &JointsSpec, scenario: &Scenario, from: &Posture, payload: Option<&FramePose>, effort: &[f64]) -> Result<Vec<DVector<f64>>, Error> {
    let free = scenario.system.without_fixtures();
    let carry = || {
        project_closure(&free, &scenario.stance, &from.joints, payload, 1e-12).map_err(|e| {
            Error::Ergonomics(ErgonomicsError::Infeasible(format!("{}: `{field}`: the payload target is out of reach ({e})", doc.path.display())))
        })
    };
    match spec {
        JointsSpec::Keyword(k) if k == "carry" => carry(),
        JointsSpec::Keyword(k) if k == "optimize" => {
            let mut problem = PostureProblem::new(free.clone(), scenario.stance.clone(), payload.copied(), carry()?);
            problem.effort = effort.to_vec();
            Ok(optimize_posture(&problem)?.joints)
        }
        JointsSpec::Keyword(k) => Err(doc.invalid(field, format!("unknown keyword `{k}` (expected `carry` or `optimize`)"))),
        JointsSpec::Explicit(rows) => {
            let agents = scenario.system.agents();
            if rows.len() != agents.len() || rows.iter().zip(agents).any(|(r, m)| r.len() != m.num_joints()) {
                return Err(doc.invalid(field, "one joint vector per agent, each with the model's joint count"));
            }
            let joints: Vec<DVector<f64>> = rows.iter().map(|r| DVector::from_column_slice(r)).collect();
            let state = placed_state(&free, &scenario.stance, &joints, payload.copied());
            let err = closure_violation(&free, &scenario.stance, &state);
            if err > CLOSURE_TOL {
                return Err(doc.invalid(field, format!("joints violate the contact closure by {err:.3e}")));
            }
            Ok(joints)
        }
        JointsSpec::Solution { solution } => Ok(load_solution(&doc.resolve(solution))?.posture().joints),
    }
}

fn check_effort(doc: &Doc, field: &str, effort: &[f64], agents: usize) -> Result<(), Error> {
    if effort.len() != agents {
        return Err(doc.invalid(field, format!("{} entries for {agents} agents", effort.len())));
    }
    for (i, k) in effort.iter().enumerate() {
        positive(doc, &format!("{field}[{i}]"), *k)?;
    }
    Ok(())
}

/// Loads a posture problem with the scenario it refers to. The fixtures are
/// dropped: the optimized posture holds the payload with the grasps alone.
pub fn load_problem(path: &Path) -> Result<(Scenario, PostureProblem), Error> {
    let text = read_text(path)?;
    let file: ProblemFile = parse(path, &text)?;
    let doc = Doc { path, text: &text };
    let scenario = load_scenario(&doc.resolve(&file.scenario))?;
    check_effort(&doc, "effort", &file.effort, scenario.system.agents().len())?;
    if file.max_iterations == 0 {
        return Err(doc.invalid("max_iterations", "must be at least 1"));
    }
    positive(&doc, "gradient_tolerance", file.gradient_tolerance)?;
    let start = scenario.initial_posture();
    let target = file.payload_target.map(|p| p.pose()).or(start.payload);
    let guess = match &file.initial_guess {
        JointsSpec::Keyword(k) if k == "initial" => start.joints.clone(),
        JointsSpec::Keyword(k) if k == "optimize" => return Err(doc.invalid("initial_guess", "`optimize` is not a starting point")),
        spec => resolve_joints(&doc, "initial_guess", spec, &scenario, &start, target.as_ref(), &file.effort)?,
    };
    let mut problem = PostureProblem::new(scenario.system.without_fixtures(), scenario.stance.clone(), target, guess);
    problem.effort = file.effort.clone();
    problem.max_iterations = file.max_iterations;
    problem.gradient_tolerance = file.gradient_tolerance;
    Ok((scenario, problem))
}

// ---------------------------------------------------------------------------
// sequences

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetFile {
    /// Payload pose at the end of the transition; defaults to the current one.
    #[serde(default)]
    pub payload: Option<PoseFile>,
    pub joints: JointsSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseFile {
    pub name: String,
    #[serde(default)]
    pub target: Option<TargetFile>,
    #[serde(default)]
    pub duration: f64,
    #[serde(default)]
    pub hold: f64,
    #[serde(default)]
    pub release_fixtures: bool,
    #[serde(default)]
    pub effort: Option<Vec<f64>>,
    #[serde(default)]
    pub settle_tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceFile {
    pub phases: Vec<PhaseFile>,
}

fn build_sequence(doc: &Doc, file: &SequenceFile, scenario: &Scenario) -> Result<Sequence, Error> {
    let na = scenario.system.agents().len();
    let mut current = scenario.initial_posture();
    let mut effort = vec![1.0; na];
    let mut phases = Vec::new();
    for (i, p) in file.phases.iter().enumerate() {
        let at = |f: &str| format!("phases[{i}].{f}");
        non_negative(doc, &at("duration"), p.duration)?;
        non_negative(doc, &at("hold"), p.hold)?;
        if let Some(e) = &p.effort {
            check_effort(doc, &at("effort"), e, na)?;
            effort = e.clone();
        }
        if let Some(tol) = p.settle_tolerance {
            positive(doc, &at("settle_tolerance"), tol)?;
        }
        let target = match &p.target {
            None => None,
            Some(t) => {
                positive(doc, &at("duration"), p.duration)?;
                let payload = t.payload.map(|x| x.pose()).or(current.payload);
                let joints = resolve_joints(doc, &at("target.joints"), &t.joints, scenario, &current, payload.as_ref(), &effort)?;
                current = Posture { joints, payload };
                Some(current.clone())
            }
        };
        phases.push(Phase {
            name: p.name.clone(),
            target,
            duration: p.duration,
            hold: p.hold,
            release_fixtures: p.release_fixtures,
            effort: p.effort.clone(),
            settle_tolerance: p.settle_tolerance,
        });
    }
    Ok(Sequence { phases })
}

/// Loads a sequence, resolving its posture targets against `scenario`.
pub fn load_sequence(path: &Path, scenario: &Scenario) -> Result<Sequence, Error> {
    let text = read_text(path)?;
    let file: SequenceFile = parse(path, &text)?;
    build_sequence(&Doc { path, text: &text }, &file, scenario)
}

// ---------------------------------------------------------------------------
// document kinds

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Model,
    Scenario,
    Gains,
    Sequence,
    Problem,
    Solution,
}

/// Guesses a document's kind from its top-level keys.
pub fn detect_kind(path: &Path) -> Result<FileKind, Error> {
    let text = read_text(path)?;
    let value: serde_json::Value = parse(path, &text)?;
    let has = |k: &str| value.get(k).is_some();
    Ok(if has("links") {
        FileKind::Model
    } else if has("contacts") {
        FileKind::Scenario
    } else if has("momentum_kp") {
        FileKind::Gains
    } else if has("phases") {
        FileKind::Sequence
    } else if has("objective") {
        FileKind::Solution
    } else if has("effort") && has("scenario") {
        FileKind::Problem
    } else {
        return Err(Error::Invariant { path: path.to_path_buf(), line: 1, field: String::new(), msg: "unrecognized document kind".into() });
    })
}

// ---------------------------------------------------------------------------
// trace CSV

/// The trace as written to `trace.csv`: one row per controller tick, columns in a
/// fixed order (see [`trace_columns`]). The phase name is the only text column.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub columns: Vec<String>,
    pub phases: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Column order: `t`, `phase`, `status`, per agent `q{a}.{joint}` then `tau{a}.{joint}`,
/// payload pose and its reference (`x y z roll pitch yaw`), total CoM and its reference,
/// per-agent CoM, per-agent torque norm, residuals, closure measures and energy error.
pub fn trace_columns(joint_names: &[Vec<String>]) -> Vec<String> {
    let mut c: Vec<String> = vec!["t".into(), "phase".into(), "status".into()];
    for (a, names) in joint_names.iter().enumerate() {
        c.extend(names.iter().map(|n| format!("q{a}.{n}")));
        c.extend(names.iter().map(|n| format!("tau{a}.{n}")));
    }
    for prefix in ["payload", "payload_ref"] {
        c.extend(["x", "y", "z", "roll", "pitch", "yaw"].iter().map(|k| format!("{prefix}.{k}")));
    }
    for prefix in ["com", "com_ref"] {
        c.extend(["x", "y", "z"].iter().map(|k| format!("{prefix}.{k}")));
    }
    for a in 0..joint_names.len() {
        c.extend(["x", "y", "z"].iter().map(|k| format!("com{a}.{k}")));
    }
    c.extend((0..joint_names.len()).map(|a| format!("tau_norm{a}")));
    c.extend(["momentum_residual", "payload_residual", "constraint_velocity", "closure_error", "energy_error"].map(String::from));
    c
}

impl TraceTable {
    pub fn from_trace(trace: &SimTrace, system: &CoupledSystem) -> Self {
        let columns = trace_columns(&trace.joint_names);
        let e0 = trace.samples.first().map_or(0.0, |s| s.energy());
        let pose6 = |p: Option<&FramePose>| -> [f64; 6] {
            p.map_or([f64::NAN; 6], |p| {
                let (x, r) = p.xyz_rpy();
                [x[0], x[1], x[2], r[0], r[1], r[2]]
            })
        };
        let mut phases = Vec::with_capacity(trace.samples.len());
        let mut rows = Vec::with_capacity(trace.samples.len());
        for s in &trace.samples {
            let mut r = vec![s.t, f64::NAN, f64::from(s.status.code())];
            for (a, agent) in s.state.agents.iter().enumerate() {
                r.extend(agent.joints.iter());
                let n = agent.joints.len();
                r.extend(s.torques.rows(system.torque_offset(a), n).iter());
            }
            r.extend(pose6(s.state.payload.as_ref().map(|p| &p.pose)));
            r.extend(pose6(s.payload_reference.as_ref()));
            r.extend(s.total_com.iter());
            r.extend(s.reference_com.iter());
            for c in &s.agent_com {
                r.extend(c.iter());
            }
            r.extend((0..s.state.agents.len()).map(|a| s.torque_norm(system, a)));
            r.extend([s.momentum_residual, s.payload_residual, s.constraint_velocity, s.closure_error, s.energy() - e0 - s.actuator_work - s.constraint_work]);
            debug_assert_eq!(r.len(), columns.len());
            phases.push(trace.phases.get(s.phase).map_or_else(String::new, |p| p.name.clone()));
            rows.push(r);
        }
        TraceTable { columns, phases, rows }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn values(&self, name: &str) -> Option<Vec<f64>> {
        self.column(name).map(|k| self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn num_agents(&self) -> usize {
        self.columns.iter().filter(|c| c.starts_with("tau_norm")).count()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        let phase_col = self.column("phase");
        for (r, phase) in self.rows.iter().zip(&self.phases) {
            let mut fields: Vec<String> = r.iter().map(|x| format!("{x}")).collect();
            if let Some(k) = phase_col {
                fields[k] = phase.clone();
            }
            w.write_record(&fields).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn from_csv(path: &Path, text: &str) -> Result<Self, Error> {
        let bad = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, column: 1, msg };
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let columns: Vec<String> = rdr.headers().map_err(|e| bad(1, e.to_string()))?.iter().map(String::from).collect();
        let phase_col = columns.iter().position(|c| c == "phase").ok_or_else(|| bad(1, "missing `phase` column".into()))?;
        let mut phases = Vec::new();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| bad(line, e.to_string()))?;
            if rec.len() != columns.len() {
                return Err(bad(line, format!("{} fields, header has {}", rec.len(), columns.len())));
            }
            let mut row = Vec::with_capacity(rec.len());
            for (k, field) in rec.iter().enumerate() {
                if k == phase_col {
                    phases.push(field.to_owned());
                    row.push(f64::NAN);
                } else {
                    row.push(field.parse().map_err(|_| bad(line, format!("column `{}`: `{field}` is not a number", columns[k])))?);
                }
            }
            rows.push(row);
        }
        Ok(TraceTable { columns, phases, rows })
    }
}

pub fn write_trace(path: &Path, table: &TraceTable) -> Result<(), Error> {
    write_text(path, &table.to_csv())
}

pub fn read_trace(path: &Path) -> Result<TraceTable, Error> {
    TraceTable::from_csv(path, &read_text(path)?)
}

// ---------------------------------------------------------------------------
// run manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub scenario: String,
    pub gains: String,
    pub sequence: String,
    pub out: String,
    pub dt: f64,
    pub control_period: f64,
    #[serde(default)]
    pub duration: Option<f64>,
    pub seed: u64,
    pub version: String,
}

/// Human-readable listing of phases and tick counts, for `--dry-run`.
pub fn describe_plan(sequence: &Sequence, dt: f64, control_period: f64, duration: Option<f64>) -> String {
    let mut out = String::new();
    let mut t = 0.0;
    for (i, p) in sequence.phases.iter().enumerate() {
        let ticks = (p.total() / control_period).round() as u64;
        let _ = writeln!(
            out,
            "phase {i} `{}`: {:.3}..{:.3} s, {} ticks, transition {:.3} s{}{}",
            p.name,
            t,
            t + p.total(),
            ticks,
            p.duration,
            if p.release_fixtures { ", releases fixtures" } else { "" },
            p.effort.as_ref().map_or(String::new(), |e| format!(", effort {e:?}"))
        );
        t += p.total();
    }
    let stop = duration.map_or(t, |d| d.min(t));
    let _ = writeln!(out, "total {:.3} s, {} ticks at {} s, {} steps per tick of {} s", stop, (stop / control_period).round() as u64, control_period, (control_period / dt).round() as u64, dt);
    out
}
