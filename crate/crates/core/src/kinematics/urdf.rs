//! Reader and writer for the URDF subset: `robot`, `link`, `joint` with
//! `origin`, `axis`, `limit`, `parent` and `child`. Everything else is
//! recorded as a warning and skipped.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::chain::{Joint, JointKind, KinematicChain, Link};
use super::pose::{Pose6D, Vec3};
use super::KinematicsError;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct UrdfOptions {
    /// Movable joints whose name contains this substring are grippers.
    pub gripper_pattern: String,
}

impl Default for UrdfOptions {
    fn default() -> Self {
        Self {
            gripper_pattern: "gripper".to_string(),
        }
    }
}

pub fn parse_urdf<T: Scalar>(text: &str) -> Result<KinematicChain<T>, KinematicsError> {
    parse_urdf_with(text, &UrdfOptions::default())
}

pub fn parse_urdf_with<T: Scalar>(
    text: &str,
    opts: &UrdfOptions,
) -> Result<KinematicChain<T>, KinematicsError> {
    let doc = roxmltree::Document::parse(text)
        .map_err(|e| KinematicsError::MalformedXml(e.to_string()))?;
    let robot = doc.root_element();
    if robot.tag_name().name() != "robot" {
        return Err(KinematicsError::MalformedXml(format!(
            "root element is <{}>, expected <robot>",
            robot.tag_name().name()
        )));
    }
    let robot_name = robot.attribute("name").unwrap_or("robot").to_string();
    let mut warnings = Vec::new();
    let mut links = Vec::new();
    let mut link_index = HashMap::new();

    for node in robot.children().filter(|n| n.is_element()) {
        if node.tag_name().name() != "link" {
            continue;
        }
        let name = required_attr(&node, "name")?;
        if link_index.insert(name.to_string(), links.len()).is_some() {
            return Err(KinematicsError::DuplicateName(name.to_string()));
        }
        for child in node.children().filter(|n| n.is_element()) {
            warnings.push(format!(
                "link '{}': ignored <{}>",
                name,
                child.tag_name().name()
            ));
        }
        links.push(Link {
            name: name.to_string(),
        });
    }

    let mut joints = Vec::new();
    let mut joint_names = HashMap::new();
    for node in robot.children().filter(|n| n.is_element()) {
        match node.tag_name().name() {
            "link" => {}
            "joint" => {
                let joint = parse_joint::<T>(&node, &link_index, opts, &mut warnings)?;
                if joint_names.insert(joint.name.clone(), ()).is_some() {
                    return Err(KinematicsError::DuplicateName(joint.name));
                }
                joints.push(joint);
            }
            other => warnings.push(format!("robot: ignored <{other}>")),
        }
    }

    KinematicChain::from_parts(robot_name, links, joints, warnings)
}

fn required_attr<'a>(node: &roxmltree::Node<'a, '_>, name: &str) -> Result<&'a str, KinematicsError> {
    node.attribute(name).ok_or_else(|| {
        KinematicsError::MalformedXml(format!(
            "<{}> missing attribute '{}'",
            node.tag_name().name(),
            name
        ))
    })
}

fn parse_vec3<T: Scalar>(text: &str, what: &str) -> Result<Vec3<T>, KinematicsError> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| KinematicsError::MalformedXml(format!("bad {what} '{text}'")))?;
    if vals.len() != 3 {
        return Err(KinematicsError::MalformedXml(format!(
            "{what} needs 3 numbers, got '{text}'"
        )));
    }
    Ok([T::lit(vals[0]), T::lit(vals[1]), T::lit(vals[2])])
}

fn parse_scalar<T: Scalar>(text: &str, what: &str) -> Result<T, KinematicsError> {
    text.trim()
        .parse::<f64>()
        .map(T::lit)
        .map_err(|_| KinematicsError::MalformedXml(format!("bad {what} '{text}'")))
}

fn parse_joint<T: Scalar>(
    node: &roxmltree::Node,
    link_index: &HashMap<String, usize>,
    opts: &UrdfOptions,
    warnings: &mut Vec<String>,
) -> Result<Joint<T>, KinematicsError> {
    let name = required_attr(node, "name")?.to_string();
    let ty = required_attr(node, "type")?;
    let kind = match ty {
        "revolute" | "continuous" => JointKind::Revolute,
        "prismatic" => JointKind::Prismatic,
        "fixed" => JointKind::Fixed,
        other => {
            warnings.push(format!("joint '{name}': type '{other}' treated as fixed"));
            JointKind::Fixed
        }
    };
    let mut origin = Pose6D::identity();
    let mut axis = [T::one(), T::zero(), T::zero()];
    let mut limits = None;
    let mut parent = None;
    let mut child = None;
    for el in node.children().filter(|n| n.is_element()) {
        match el.tag_name().name() {
            "origin" => {
                let xyz = match el.attribute("xyz") {
                    Some(s) => parse_vec3(s, "origin xyz")?,
                    None => [T::zero(); 3],
                };
                let rpy = match el.attribute("rpy") {
                    Some(s) => parse_vec3(s, "origin rpy")?,
                    None => [T::zero(); 3],
                };
                origin = Pose6D::from_xyz_rpy(xyz, rpy);
            }
            "axis" => {
                let raw: Vec3<T> = parse_vec3(required_attr(&el, "xyz")?, "axis")?;
                let n = super::pose::norm3(raw);
                if n <= T::zero() {
                    return Err(KinematicsError::InvalidAxis { joint: name });
                }
                axis = raw.map(|v| v / n);
            }
            "limit" => {
                if ty != "continuous" {
                    let lo = el
                        .attribute("lower")
                        .map(|s| parse_scalar(s, "limit lower"))
                        .transpose()?
                        .unwrap_or(T::zero());
                    let hi = el
                        .attribute("upper")
                        .map(|s| parse_scalar(s, "limit upper"))
                        .transpose()?
                        .unwrap_or(T::zero());
                    limits = Some([lo, hi]);
                }
            }
            "parent" => parent = Some(required_attr(&el, "link")?.to_string()),
            "child" => child = Some(required_attr(&el, "link")?.to_string()),
            other => warnings.push(format!("joint '{name}': ignored <{other}>")),
        }
    }
    let resolve = |l: Option<String>, role: &str| -> Result<usize, KinematicsError> {
        let l = l.ok_or_else(|| {
            KinematicsError::MalformedXml(format!("joint '{name}' has no <{role}>"))
        })?;
        link_index
            .get(&l)
            .copied()
            .ok_or_else(|| KinematicsError::MissingLink {
                joint: name.clone(),
                link: l,
            })
    };
    let parent = resolve(parent, "parent")?;
    let child = resolve(child, "child")?;
    let gripper = kind.is_movable() && !opts.gripper_pattern.is_empty() && name.contains(&opts.gripper_pattern);
    Ok(Joint {
        name,
        kind,
        gripper,
        axis,
        origin,
        limits,
        parent,
        child,
    })
}

/// Serializes the modeled subset back to URDF text.
pub fn to_urdf<T: Scalar>(chain: &KinematicChain<T>) -> String {
    let mut out = String::new();
    let f = |v: T| v.as_f64();
    let _ = writeln!(out, "<?xml version=\"1.0\"?>");
    let _ = writeln!(out, "<robot name=\"{}\">", escape(&chain.name));
    for link in &chain.links {
        let _ = writeln!(out, "  <link name=\"{}\"/>", escape(&link.name));
    }
    for j in &chain.joints {
        let ty = match (j.kind, j.limits.is_some()) {
            (JointKind::Revolute, true) => "revolute",
            (JointKind::Revolute, false) => "continuous",
            (JointKind::Prismatic, _) => "prismatic",
            (JointKind::Fixed, _) => "fixed",
        };
        let _ = writeln!(out, "  <joint name=\"{}\" type=\"{}\">", escape(&j.name), ty);
        let p = j.origin.position;
        let r = j.origin.orientation.to_rpy();
        let _ = writeln!(
            out,
            "    <origin xyz=\"{} {} {}\" rpy=\"{} {} {}\"/>",
            f(p[0]),
            f(p[1]),
            f(p[2]),
            f(r[0]),
            f(r[1]),
            f(r[2])
        );
        let _ = writeln!(out, "    <parent link=\"{}\"/>", escape(&chain.links[j.parent].name));
        let _ = writeln!(out, "    <child link=\"{}\"/>", escape(&chain.links[j.child].name));
        if j.kind.is_movable() {
            let a = j.axis;
            let _ = writeln!(out, "    <axis xyz=\"{} {} {}\"/>", f(a[0]), f(a[1]), f(a[2]));
        }
        if let Some([lo, hi]) = j.limits {
            let _ = writeln!(out, "    <limit lower=\"{}\" upper=\"{}\"/>", f(lo), f(hi));
        }
        let _ = writeln!(out, "  </joint>");
    }
    let _ = writeln!(out, "</robot>");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
