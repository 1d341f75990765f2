//! Ground-truth scene descriptions and their seeded sampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned ellipse in relative image coordinates (`[0,1]²`, x to the
/// right, y downwards).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.cx) / self.rx;
        let dy = (y - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }

    pub fn inside_unit_square(&self) -> bool {
        self.rx > 0.0
            && self.ry > 0.0
            && self.cx - self.rx >= 0.0
            && self.cx + self.rx <= 1.0
            && self.cy - self.ry >= 0.0
            && self.cy + self.ry <= 1.0
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { rx: self.rx * factor, ry: self.ry * factor, ..*self }
    }

    /// Overlap test on a fixed 100×100 lattice of the unit square.
    pub fn intersects(&self, other: &Ellipse) -> bool {
        lattice().any(|(x, y)| self.contains(x, y) && other.contains(x, y))
    }
}

fn lattice() -> impl Iterator<Item = (f64, f64)> {
    const N: usize = 100;
    (0..N * N).map(|i| (((i % N) as f64 + 0.5) / N as f64, ((i / N) as f64 + 0.5) / N as f64))
}

/// An ellipse and the additive intensity it contributes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Structure {
    pub ellipse: Ellipse,
    pub intensity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Laterality {
    Left,
    Right,
    Bilateral,
    Cardiac,
}

impl Laterality {
    pub fn word(self) -> &'static str {
        match self {
            Laterality::Left => "left",
            Laterality::Right => "right",
            Laterality::Bilateral => "bilateral",
            Laterality::Cardiac => "cardiac",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    /// Uniform opacity over the ellipse.
    Ellipse(Ellipse),
    /// Mottled opacity: only pixels on a diagonal checker pattern inside the
    /// ellipse receive the intensity.
    Haze(Ellipse),
}

impl Region {
    pub fn ellipse(&self) -> &Ellipse {
        match self {
            Region::Ellipse(e) | Region::Haze(e) => e,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbnormalitySpec {
    pub class_id: usize,
    pub region: Region,
    pub intensity_delta: f64,
    pub laterality: Laterality,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub left_lung: Structure,
    pub right_lung: Structure,
    pub heart: Structure,
    pub abnormalities: Vec<AbnormalitySpec>,
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

/// Soft-tissue level every structure is added onto.
pub const BACKGROUND: f64 = 0.5;
pub const MAX_NOISE_SIGMA: f64 = 0.2;

impl SceneSpec {
    pub fn lungs(&self) -> [&Ellipse; 2] {
        [&self.left_lung.ellipse, &self.right_lung.ellipse]
    }

    pub fn in_lungs(&self, x: f64, y: f64) -> bool {
        self.left_lung.ellipse.contains(x, y) || self.right_lung.ellipse.contains(x, y)
    }

    pub fn has_class(&self, class_id: usize) -> bool {
        self.abnormalities.iter().any(|a| a.class_id == class_id)
    }

    pub fn validate(&self, n_classes: usize) -> Result<()> {
        let (l, r, h) = (&self.left_lung.ellipse, &self.right_lung.ellipse, &self.heart.ellipse);
        for (name, e) in [("left lung", l), ("right lung", r), ("heart", h)] {
            if !e.inside_unit_square() {
                return Err(Error::Scene(format!("{name} ellipse leaves the image")));
            }
        }
        if l.intersects(r) {
            return Err(Error::Scene("lung ellipses overlap".into()));
        }
        if !(h.intersects(l) && h.intersects(r)) {
            return Err(Error::Scene("heart must overlap the medial edge of both lungs".into()));
        }
        if !(0.0..=MAX_NOISE_SIGMA).contains(&self.noise_sigma) {
            return Err(Error::Scene(format!(
                "noise_sigma {} outside [0, {MAX_NOISE_SIGMA}]",
                self.noise_sigma
            )));
        }
        for a in &self.abnormalities {
            if a.class_id >= n_classes {
                return Err(Error::Scene(format!("class id {} outside {n_classes} classes", a.class_id)));
            }
            if !(a.intensity_delta > 0.0 && a.intensity_delta <= 1.0) {
                return Err(Error::Scene(format!("intensity delta {} outside (0,1]", a.intensity_delta)));
            }
            let e = a.region.ellipse();
            if !e.inside_unit_square() {
                return Err(Error::Scene(format!("abnormality of class {} leaves the image", a.class_id)));
            }
            let anchored = match a.laterality {
                Laterality::Cardiac => e.intersects(h),
                _ => e.intersects(l) || e.intersects(r),
            };
            if !anchored {
                return Err(Error::Scene(format!(
                    "abnormality of class {} does not touch its anchoring organ",
                    a.class_id
                )));
            }
        }
        Ok(())
    }
}

/// How a class is drawn. Known class names get a dedicated appearance;
/// anything else falls back to a sized nodule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassStyle {
    Infiltration,
    Consolidation,
    Effusion,
    Cardiomegaly,
    Nodule(usize),
}

impl ClassStyle {
    pub fn for_class(name: &str, class_id: usize) -> Self {
        match name.to_ascii_lowercase().as_str() {
            "infiltration" => ClassStyle::Infiltration,
            "consolidation" => ClassStyle::Consolidation,
            "pleural effusion" | "effusion" => ClassStyle::Effusion,
            "cardiomegaly" => ClassStyle::Cardiomegaly,
            _ => ClassStyle::Nodule(class_id),
        }
    }
}

fn jitter(rng: &mut ChaCha8Rng, centre: f64, spread: f64) -> f64 {
    centre + rng.gen_range(-spread..=spread)
}

/// Samples lung and heart geometry.
pub fn sample_anatomy(rng: &mut ChaCha8Rng) -> (Structure, Structure, Structure) {
    let lung = |rng: &mut ChaCha8Rng, cx: f64| Structure {
        ellipse: Ellipse {
            cx: jitter(rng, cx, 0.015),
            cy: jitter(rng, 0.47, 0.02),
            rx: jitter(rng, 0.14, 0.01),
            ry: jitter(rng, 0.30, 0.02),
        },
        intensity: -0.3,
    };
    let left = lung(rng, 0.29);
    let right = lung(rng, 0.71);
    let heart = Structure {
        ellipse: Ellipse {
            cx: jitter(rng, 0.5, 0.015),
            cy: jitter(rng, 0.62, 0.02),
            rx: jitter(rng, 0.15, 0.01),
            ry: jitter(rng, 0.13, 0.01),
        },
        intensity: 0.25,
    };
    (left, right, heart)
}

/// Random point well inside `lung` (within half its semi-axes).
fn point_in(rng: &mut ChaCha8Rng, lung: &Ellipse) -> (f64, f64) {
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let radius = 0.5 * rng.gen_range(0.0f64..1.0).sqrt();
    (lung.cx + radius * lung.rx * angle.cos(), lung.cy + radius * lung.ry * angle.sin())
}

fn clamp_inside(mut e: Ellipse) -> Ellipse {
    e.cx = e.cx.clamp(e.rx, 1.0 - e.rx);
    e.cy = e.cy.clamp(e.ry, 1.0 - e.ry);
    e
}

/// Samples the abnormality of `class_id` drawn in `style`.
pub fn sample_abnormality(
    rng: &mut ChaCha8Rng,
    class_id: usize,
    style: ClassStyle,
    left: &Ellipse,
    right: &Ellipse,
    heart: &Ellipse,
) -> AbnormalitySpec {
    let side = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.5) { Laterality::Left } else { Laterality::Right };
    let lung_of = |lat: Laterality| if lat == Laterality::Left { left } else { right };
    match style {
        ClassStyle::Infiltration => {
            let laterality = match rng.gen_range(0..3) {
                0 => Laterality::Left,
                1 => Laterality::Right,
                _ => Laterality::Bilateral,
            };
            let e = if laterality == Laterality::Bilateral {
                Ellipse {
                    cx: 0.5,
                    cy: jitter(rng, 0.36, 0.05),
                    rx: jitter(rng, 0.30, 0.02),
                    ry: jitter(rng, 0.08, 0.01),
                }
            } else {
                let (cx, cy) = point_in(rng, lung_of(laterality));
                Ellipse { cx, cy, rx: jitter(rng, 0.09, 0.01), ry: jitter(rng, 0.14, 0.02) }
            };
            AbnormalitySpec {
                class_id,
                region: Region::Haze(clamp_inside(e)),
                intensity_delta: jitter(rng, 0.3, 0.03),
                laterality,
            }
        }
        ClassStyle::Consolidation => {
            let laterality = side(rng);
            let (cx, cy) = point_in(rng, lung_of(laterality));
            let e = Ellipse { cx, cy, rx: jitter(rng, 0.065, 0.01), ry: jitter(rng, 0.075, 0.01) };
            AbnormalitySpec {
                class_id,
                region: Region::Ellipse(clamp_inside(e)),
                intensity_delta: jitter(rng, 0.3, 0.03),
                laterality,
            }
        }
        ClassStyle::Effusion => {
            let laterality = side(rng);
            let lung = lung_of(laterality);
            let e = Ellipse {
                cx: lung.cx,
                cy: lung.cy + 0.8 * lung.ry,
                rx: lung.rx * 1.05,
                ry: jitter(rng, 0.09, 0.01),
            };
            AbnormalitySpec {
                class_id,
                region: Region::Ellipse(clamp_inside(e)),
                intensity_delta: jitter(rng, 0.35, 0.03),
                laterality,
            }
        }
        ClassStyle::Cardiomegaly => AbnormalitySpec {
            class_id,
            region: Region::Ellipse(clamp_inside(heart.scaled(jitter(rng, 1.45, 0.05)))),
            intensity_delta: jitter(rng, 0.18, 0.02),
            laterality: Laterality::Cardiac,
        },
        ClassStyle::Nodule(id) => {
            let laterality = side(rng);
            let (cx, cy) = point_in(rng, lung_of(laterality));
            let r = 0.035 + 0.01 * (id % 4) as f64;
            AbnormalitySpec {
                class_id,
                region: Region::Ellipse(clamp_inside(Ellipse { cx, cy, rx: r, ry: r })),
                intensity_delta: 0.2 + 0.05 * (id % 3) as f64,
                laterality,
            }
        }
    }
}
