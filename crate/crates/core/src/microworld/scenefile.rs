//! Plain-text scene files. One record per line, `kind key=value ...`:
//!
//! ```text
//! scene v1
//! room w=320 d=300
//! agent x=150 y=140 height=1 reach=1.5
//! render jitter=0.02 noise=0.01 floor=1234
//! obstacle x0=0 y0=0 x1=120 y1=50 height=0.9
//! object shape=box x=180 y=90 rot=0 size=40 height=0.3 color=0.8,0.6,0.2 texture=0 mass=0.3 fmin=4 static=0
//! ```
//!
//! Lengths are integer centimetres, heights meters. Floats are written with
//! the shortest representation that round-trips.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{AgentPose, ObjectSpec, Obstacle, SceneSpec, ShapeKind};
use crate::error::{Error, Result};

const HEADER: &str = "scene v1";

pub fn to_string(s: &SceneSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER}");
    let _ = writeln!(out, "room w={} d={}", s.room_w_cm, s.room_d_cm);
    let _ = writeln!(
        out,
        "agent x={} y={} height={} reach={}",
        s.spawn.x_cm, s.spawn.y_cm, s.spawn.camera_height_m, s.spawn.reach_m
    );
    let _ = writeln!(
        out,
        "render jitter={} noise={} floor={}",
        s.lighting_jitter, s.pixel_noise, s.floor_texture
    );
    for o in &s.obstacles {
        let _ = writeln!(
            out,
            "obstacle x0={} y0={} x1={} y1={} height={}",
            o.x0, o.y0, o.x1, o.y1, o.height_m
        );
    }
    for o in &s.objects {
        let _ = writeln!(
            out,
            "object shape={} x={} y={} rot={} size={} height={} color={},{},{} texture={} mass={} fmin={} static={}",
            o.shape.name(),
            o.x_cm,
            o.y_cm,
            o.rotation,
            o.size_cm,
            o.height_m,
            o.color[0],
            o.color[1],
            o.color[2],
            o.texture_seed,
            o.mass_kg,
            o.min_force,
            o.is_static as u8
        );
    }
    out
}

struct Fields<'a> {
    map: HashMap<&'a str, &'a str>,
    line: usize,
    path: &'a Path,
}

impl<'a> Fields<'a> {
    fn parse(tokens: &[&'a str], line: usize, path: &'a Path) -> Result<Self> {
        let mut map = HashMap::new();
        for t in tokens {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| Error::malformed(path, format!("line {line}: expected key=value, got {t:?}")))?;
            map.insert(k, v);
        }
        Ok(Self { map, line, path })
    }

    fn raw(&self, key: &str) -> Result<&'a str> {
        self.map
            .get(key)
            .copied()
            .ok_or_else(|| Error::malformed(self.path, format!("line {}: missing {key}", self.line)))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key)?;
        v.parse()
            .map_err(|_| Error::malformed(self.path, format!("line {}: bad value {key}={v}", self.line)))
    }
}

pub fn parse(text: &str, path: &Path) -> Result<SceneSpec> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('#')
    });
    match lines.next() {
        Some((_, l)) if l.trim() == HEADER => {}
        _ => return Err(Error::malformed(path, format!("missing header {HEADER:?}"))),
    }
    let mut room = None;
    let mut agent = None;
    let mut render = None;
    let mut obstacles = Vec::new();
    let mut objects = Vec::new();
    for (i, l) in lines {
        let lineno = i + 1;
        let tokens: Vec<&str> = l.split_whitespace().collect();
        let f = Fields::parse(&tokens[1..], lineno, path)?;
        match tokens[0] {
            "room" => room = Some((f.get::<i32>("w")?, f.get::<i32>("d")?)),
            "agent" => {
                agent = Some(AgentPose {
                    x_cm: f.get("x")?,
                    y_cm: f.get("y")?,
                    camera_height_m: f.get("height")?,
                    reach_m: f.get("reach")?,
                })
            }
            "render" => render = Some((f.get::<f32>("jitter")?, f.get::<f32>("noise")?, f.get::<u32>("floor")?)),
            "obstacle" => obstacles.push(Obstacle {
                x0: f.get("x0")?,
                y0: f.get("y0")?,
                x1: f.get("x1")?,
                y1: f.get("y1")?,
                height_m: f.get("height")?,
            }),
            "object" => {
                let shape_name = f.raw("shape")?;
                let shape = ShapeKind::from_name(shape_name)
                    .ok_or_else(|| Error::malformed(path, format!("line {lineno}: unknown shape {shape_name}")))?;
                let color_raw = f.raw("color")?;
                let comps: Vec<f32> = color_raw
                    .split(',')
                    .map(|c| c.parse::<f32>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::malformed(path, format!("line {lineno}: bad color {color_raw}")))?;
                if comps.len() != 3 {
                    return Err(Error::malformed(path, format!("line {lineno}: color needs 3 components")));
                }
                let mass_kg: f32 = f.get("mass")?;
                if !(mass_kg > 0.0) {
                    return Err(Error::malformed(path, format!("line {lineno}: mass must be positive")));
                }
                objects.push(ObjectSpec {
                    shape,
                    x_cm: f.get("x")?,
                    y_cm: f.get("y")?,
                    rotation: f.get("rot")?,
                    size_cm: f.get("size")?,
                    height_m: f.get("height")?,
                    color: [comps[0], comps[1], comps[2]],
                    texture_seed: f.get("texture")?,
                    mass_kg,
                    min_force: f.get("fmin")?,
                    is_static: f.get::<u8>("static")? != 0,
                });
            }
            other => return Err(Error::malformed(path, format!("line {lineno}: unknown record {other:?}"))),
        }
    }
    let (room_w_cm, room_d_cm) = room.ok_or_else(|| Error::malformed(path, "missing room record"))?;
    let spawn = agent.ok_or_else(|| Error::malformed(path, "missing agent record"))?;
    if !(spawn.reach_m > 0.0) {
        return Err(Error::malformed(path, "reach must be positive"));
    }
    let (lighting_jitter, pixel_noise, floor_texture) =
        render.ok_or_else(|| Error::malformed(path, "missing render record"))?;
    Ok(SceneSpec {
        room_w_cm,
        room_d_cm,
        obstacles,
        floor_texture,
        objects,
        spawn,
        lighting_jitter,
        pixel_noise,
    })
}

pub fn save(s: &SceneSpec, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(s)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<SceneSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path)
}
