//! Procedural city blocks with a park site, used as a fully labelled
//! training and evaluation corpus.
//!
//! Each scene is an aligned quadruple:
//!
//! * `remote` — overhead-style RGB: environment colours plus per-class texture,
//! * `environment` — urban context class map with the site masked,
//! * `layout` — park element class map (background outside the site),
//! * `scheme` — the layout rendered with texture and circular plant symbols.
//!
//! The scene grammar is a Manhattan road grid, building blocks, an optional
//! water body and one rectangular park. Inside the park a looped path links
//! to every bordering urban road, with paved nodes, a structure, an optional
//! pond and scattered plants on green land.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imageio;
use crate::legend::{env, park, Legend};
use crate::raster::{class_histogram, encode_classmap, ClassMap, RasterImage};
use crate::rng;

/// Smallest park side that still fits the path loop, its setback and an
/// interior for nodes and structures.
pub const MIN_PARK_SIDE: usize = 14;
/// Setback of the loop path from the site boundary.
const LOOP_INSET: usize = 3;
const PATH_WIDTH: usize = 2;

/// Default per-class presence floor checked across corpora of 50+ scenes.
pub const DEFAULT_CLASS_FLOOR: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub canvas_size: usize,
    pub road_grid_spacing: usize,
    pub road_width: usize,
    pub building_density: f64,
    pub water_probability: f64,
    pub park_rect: Rect,
    /// Per-scene shift of the park by up to this many pixels, and shrink by
    /// up to the same amount.
    pub park_jitter: usize,
    pub texture_noise: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            canvas_size: 64,
            road_grid_spacing: 20,
            road_width: 2,
            building_density: 0.6,
            water_probability: 0.4,
            park_rect: Rect {
                x: 16,
                y: 16,
                w: 32,
                h: 32,
            },
            park_jitter: 4,
            texture_noise: 0.2,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("building_density", self.building_density)?;
        unit("water_probability", self.water_probability)?;
        unit("texture_noise", self.texture_noise)?;
        if self.road_width == 0 || self.road_grid_spacing <= self.road_width {
            return Err(Error::config(format!(
                "road grid spacing {} must exceed road width {} (> 0)",
                self.road_grid_spacing, self.road_width
            )));
        }
        let r = self.park_rect;
        let (j, rw, c) = (self.park_jitter, self.road_width, self.canvas_size);
        if r.x < j + rw || r.y < j + rw || r.x + r.w + j + rw > c || r.y + r.h + j + rw > c {
            return Err(Error::config(format!(
                "park rect {r:?} with jitter {j} must stay inside the {c}px canvas with room for {rw}px perimeter roads"
            )));
        }
        if r.w < MIN_PARK_SIDE + j || r.h < MIN_PARK_SIDE + j {
            return Err(Error::structural(format!(
                "park rect {}x{} (jitter {j}) is too small to host a connected path network; minimum side is {MIN_PARK_SIDE} after jitter",
                r.w, r.h
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Top,
    Bottom,
    Left,
    Right,
}

const SIDES: [Side; 4] = [Side::Top, Side::Bottom, Side::Left, Side::Right];

#[derive(Clone, Debug, PartialEq)]
pub struct SceneQuad {
    pub remote: RasterImage,
    pub environment: ClassMap,
    pub layout: ClassMap,
    pub scheme: RasterImage,
    pub seed: u64,
    pub site: Rect,
    /// Site sides bordered by an urban road, each carrying one entrance.
    pub entrance_sides: Vec<Side>,
}

impl SceneQuad {
    /// SHA-256 over the four rasters.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.remote.to_rgb8());
        h.update(self.environment.data());
        h.update(self.layout.data());
        h.update(self.scheme.to_rgb8());
        hex::encode(h.finalize())
    }
}

// stream ids
const ENV_STREAM: u64 = 1;
const LAYOUT_STREAM: u64 = 2;
const REMOTE_STREAM: u64 = 3;
const SCHEME_STREAM: u64 = 4;

pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<SceneQuad> {
    params.validate()?;
    let env_legend = Arc::new(Legend::environment());
    let park_legend = Arc::new(Legend::park());
    let c = params.canvas_size;

    let mut er = rng::stream(seed, ENV_STREAM);
    let site = jitter_rect(&mut er, params);
    let sides = pick_sides(&mut er);
    let env_cells = build_environment(&mut er, params, site, &sides);
    let environment = ClassMap::new(c, c, env_cells, env_legend)?;

    let mut lr = rng::stream(seed, LAYOUT_STREAM);
    let layout_cells = build_layout(&mut lr, params, site, &sides);
    let layout = ClassMap::new(c, c, layout_cells, park_legend)?;

    let remote = render_remote(&mut rng::stream(seed, REMOTE_STREAM), &environment, params.texture_noise)?;
    let scheme = render_scheme(&mut rng::stream(seed, SCHEME_STREAM), &layout)?;

    Ok(SceneQuad {
        remote,
        environment,
        layout,
        scheme,
        seed,
        site,
        entrance_sides: sides,
    })
}

fn jitter_rect(r: &mut ChaCha8Rng, p: &SceneParams) -> Rect {
    let j = p.park_jitter as i64;
    let base = p.park_rect;
    let dx = r.gen_range(-j..=j);
    let dy = r.gen_range(-j..=j);
    let dw = r.gen_range(0..=p.park_jitter);
    let dh = r.gen_range(0..=p.park_jitter);
    Rect {
        x: (base.x as i64 + dx) as usize,
        y: (base.y as i64 + dy) as usize,
        w: base.w - dw,
        h: base.h - dh,
    }
}

fn pick_sides(r: &mut ChaCha8Rng) -> Vec<Side> {
    let mut sides: Vec<Side> = SIDES.iter().copied().filter(|_| r.gen_bool(0.5)).collect();
    if sides.is_empty() {
        sides.push(SIDES[r.gen_range(0..4)]);
    }
    sides
}

fn fill_rect(cells: &mut [u8], c: usize, rect: Rect, class: u8, only_on: Option<&[u8]>) {
    for y in rect.y..(rect.y + rect.h).min(c) {
        for x in rect.x..(rect.x + rect.w).min(c) {
            let cell = &mut cells[y * c + x];
            if only_on.map_or(true, |allowed| allowed.contains(cell)) {
                *cell = class;
            }
        }
    }
}

fn fill_ellipse(cells: &mut [u8], c: usize, cx: f64, cy: f64, rx: f64, ry: f64, class: u8, only_on: &[u8]) {
    for y in 0..c {
        for x in 0..c {
            let (dx, dy) = ((x as f64 + 0.5 - cx) / rx, (y as f64 + 0.5 - cy) / ry);
            if dx * dx + dy * dy <= 1.0 && only_on.contains(&cells[y * c + x]) {
                cells[y * c + x] = class;
            }
        }
    }
}

fn build_environment(r: &mut ChaCha8Rng, p: &SceneParams, site: Rect, sides: &[Side]) -> Vec<u8> {
    let c = p.canvas_size;
    let (s, rw) = (p.road_grid_spacing, p.road_width);
    let mut cells = vec![env::BACKGROUND; c * c];

    let ox = r.gen_range(0..s);
    let oy = r.gen_range(0..s);
    let xs: Vec<usize> = (ox..c).step_by(s).collect();
    let ys: Vec<usize> = (oy..c).step_by(s).collect();
    for &x in &xs {
        fill_rect(&mut cells, c, Rect { x, y: 0, w: rw, h: c }, env::URBAN_ROAD, None);
    }
    for &y in &ys {
        fill_rect(&mut cells, c, Rect { x: 0, y, w: c, h: rw }, env::URBAN_ROAD, None);
    }
    for side in sides {
        let strip = match side {
            Side::Top => Rect { x: 0, y: site.y - rw, w: c, h: rw },
            Side::Bottom => Rect { x: 0, y: site.y + site.h, w: c, h: rw },
            Side::Left => Rect { x: site.x - rw, y: 0, w: rw, h: c },
            Side::Right => Rect { x: site.x + site.w, y: 0, w: rw, h: c },
        };
        fill_rect(&mut cells, c, strip, env::URBAN_ROAD, None);
    }

    // blocks between grid lines, including the partial ones at the edges
    let bounds = |starts: &[usize]| {
        let mut edges = vec![0];
        edges.extend(starts.iter().flat_map(|&v| [v, v + rw]));
        edges.push(c);
        edges
            .chunks(2)
            .filter(|pair| pair.len() == 2 && pair[1] > pair[0] + 2)
            .map(|pair| (pair[0], pair[1]))
            .collect::<Vec<_>>()
    };
    let free = [env::BACKGROUND];
    for (x0, x1) in bounds(&xs) {
        for (y0, y1) in bounds(&ys) {
            let (bw, bh) = (x1 - x0, y1 - y0);
            let u: f64 = r.gen();
            let (iw, ih) = (r.gen_range(bw / 2..=bw - 2), r.gen_range(bh / 2..=bh - 2));
            let ix = x0 + 1 + r.gen_range(0..=(bw - 2 - iw));
            let iy = y0 + 1 + r.gen_range(0..=(bh - 2 - ih));
            let inner = Rect { x: ix, y: iy, w: iw, h: ih };
            if u < p.building_density {
                fill_rect(&mut cells, c, inner, env::BUILDING, Some(&free));
            } else if u < p.building_density + (1.0 - p.building_density) * 0.5 {
                fill_rect(&mut cells, c, inner, env::HARD_GROUND, Some(&free));
            }
        }
    }

    if r.gen_bool(p.water_probability) {
        let cx = r.gen_range(0.0..c as f64);
        let cy = r.gen_range(0.0..c as f64);
        let rx = r.gen_range(3.0..8.0);
        let ry = r.gen_range(3.0..8.0);
        fill_ellipse(&mut cells, c, cx, cy, rx, ry, env::WATER, &[env::BACKGROUND, env::HARD_GROUND]);
    }

    fill_rect(&mut cells, c, site, env::SITE, None);
    cells
}

fn build_layout(r: &mut ChaCha8Rng, p: &SceneParams, site: Rect, sides: &[Side]) -> Vec<u8> {
    let c = p.canvas_size;
    let (m, pw) = (LOOP_INSET, PATH_WIDTH);
    let mut cells = vec![park::BACKGROUND; c * c];
    fill_rect(&mut cells, c, site, park::GREEN_LAND, None);
    let green = [park::GREEN_LAND];

    // loop path outer box and its interior
    let outer = Rect {
        x: site.x + m,
        y: site.y + m,
        w: site.w - 2 * m,
        h: site.h - 2 * m,
    };
    let interior = Rect {
        x: outer.x + pw + 1,
        y: outer.y + pw + 1,
        w: outer.w - 2 * pw - 2,
        h: outer.h - 2 * pw - 2,
    };

    // one structure in the interior
    let sw = r.gen_range(4.min(interior.w)..=7.min(interior.w));
    let sh = r.gen_range(4.min(interior.h)..=7.min(interior.h));
    let structure = Rect {
        x: interior.x + r.gen_range(0..=interior.w - sw),
        y: interior.y + r.gen_range(0..=interior.h - sh),
        w: sw,
        h: sh,
    };
    fill_rect(&mut cells, c, structure, park::STRUCTURES, None);

    // paved nodes hugging the inside of the loop
    let nodes = r.gen_range(1..=3);
    for _ in 0..nodes {
        let (nw, nh) = (r.gen_range(3..=5), r.gen_range(3..=5));
        let (nw, nh) = (nw.min(interior.w), nh.min(interior.h));
        let node = match SIDES[r.gen_range(0..4)] {
            Side::Top => Rect { x: interior.x + r.gen_range(0..=interior.w - nw), y: outer.y + pw, w: nw, h: nh },
            Side::Bottom => Rect { x: interior.x + r.gen_range(0..=interior.w - nw), y: outer.y + outer.h - pw - nh, w: nw, h: nh },
            Side::Left => Rect { x: outer.x + pw, y: interior.y + r.gen_range(0..=interior.h - nh), w: nw, h: nh },
            Side::Right => Rect { x: outer.x + outer.w - pw - nw, y: interior.y + r.gen_range(0..=interior.h - nh), w: nw, h: nh },
        };
        fill_rect(&mut cells, c, node, park::PAVING, Some(&green));
    }

    if r.gen_bool(p.water_probability) {
        let rx = r.gen_range(2.0..=(interior.w as f64 / 2.0).max(2.0));
        let ry = r.gen_range(2.0..=(interior.h as f64 / 2.0).max(2.0));
        let cx = interior.x as f64 + r.gen_range(rx..=(interior.w as f64 - rx).max(rx));
        let cy = interior.y as f64 + r.gen_range(ry..=(interior.h as f64 - ry).max(ry));
        fill_ellipse(&mut cells, c, cx, cy, rx, ry, park::WATER, &green);
    }

    let plants = (site.area() / 40).max(3);
    for _ in 0..plants {
        let cx = site.x as f64 + r.gen_range(0.0..site.w as f64);
        let cy = site.y as f64 + r.gen_range(0.0..site.h as f64);
        let rad = r.gen_range(1.0..2.2);
        fill_ellipse(&mut cells, c, cx, cy, rad, rad, park::PLANT, &green);
    }

    // roads last: the loop ring plus one connector per bordered side
    for ring in [
        Rect { x: outer.x, y: outer.y, w: outer.w, h: pw },
        Rect { x: outer.x, y: outer.y + outer.h - pw, w: outer.w, h: pw },
        Rect { x: outer.x, y: outer.y, w: pw, h: outer.h },
        Rect { x: outer.x + outer.w - pw, y: outer.y, w: pw, h: outer.h },
    ] {
        fill_rect(&mut cells, c, ring, park::ROADS, None);
    }
    for side in sides {
        let connector = match side {
            Side::Top | Side::Bottom => {
                let x = outer.x + r.gen_range(0..=outer.w - pw);
                let y = if *side == Side::Top { site.y } else { outer.y + outer.h };
                Rect { x, y, w: pw, h: m }
            }
            Side::Left | Side::Right => {
                let y = outer.y + r.gen_range(0..=outer.h - pw);
                let x = if *side == Side::Left { site.x } else { outer.x + outer.w };
                Rect { x, y, w: m, h: pw }
            }
        };
        fill_rect(&mut cells, c, connector, park::ROADS, None);
    }
    cells
}

/// Bilinear value noise in `[-1, 1]` on a lattice of `cell`-pixel spacing.
fn value_noise(r: &mut ChaCha8Rng, c: usize, cell: usize) -> Vec<f64> {
    let n = c / cell + 2;
    let lattice: Vec<f64> = (0..n * n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let mut out = Vec::with_capacity(c * c);
    for y in 0..c {
        for x in 0..c {
            let (fx, fy) = (x as f64 / cell as f64, y as f64 / cell as f64);
            let (ix, iy) = (fx as usize, fy as usize);
            let (tx, ty) = (fx - ix as f64, fy - iy as f64);
            let at = |i: usize, j: usize| lattice[j * n + i];
            let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
            let bot = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

fn render_remote(r: &mut ChaCha8Rng, environment: &ClassMap, noise: f64) -> Result<RasterImage> {
    let base = encode_classmap(environment)?;
    if noise == 0.0 {
        return Ok(base);
    }
    let c = environment.width();
    let field = value_noise(r, c, 8);
    let mut img = base;
    for y in 0..c {
        for x in 0..c {
            let i = y * c + x;
            let grain: f64 = r.gen_range(-1.0..1.0);
            let offset = noise * (0.6 * field[i] + 0.4 * grain);
            let px = img.pixel(x, y).map(|v| (v as f64 + offset) as f32);
            img.set_pixel(x, y, px);
        }
    }
    Ok(img)
}

const PLANT_RIM: [u8; 3] = [0, 110, 48];
const PLANT_CORE: [u8; 3] = [20, 175, 80];
const STRUCTURE_EDGE: [u8; 3] = [205, 0, 205];

fn render_scheme(r: &mut ChaCha8Rng, layout: &ClassMap) -> Result<RasterImage> {
    let c = layout.width();
    let mut img = encode_classmap(layout)?;
    let field = value_noise(r, c, 4);
    let rgb = |v: [u8; 3]| v.map(|b| b as f32 / 255.0);
    for y in 0..c {
        for x in 0..c {
            let class = layout.get(x, y);
            let neighbours = [(0i64, -1i64), (0, 1), (-1, 0), (1, 0)].map(|(dx, dy)| {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= c as i64 || ny >= c as i64 {
                    class
                } else {
                    layout.get(nx as usize, ny as usize)
                }
            });
            let edge = neighbours.iter().any(|&n| n != class);
            let px = match class {
                park::BACKGROUND => continue,
                park::PLANT if edge => rgb(PLANT_RIM),
                park::PLANT => rgb(PLANT_CORE),
                park::STRUCTURES if edge => rgb(STRUCTURE_EDGE),
                _ => {
                    let t = 0.05 * field[y * c + x] as f32;
                    img.pixel(x, y).map(|v| v + t)
                }
            };
            img.set_pixel(x, y, px);
        }
    }
    Ok(img)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub prng: String,
    pub params: SceneParams,
    pub seeds: Vec<u64>,
    pub scene_hashes: Vec<String>,
    /// Layout class fractions over the whole corpus, park legend order.
    pub layout_histogram: Vec<f64>,
    /// Environment class fractions over the whole corpus.
    pub environment_histogram: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub scenes: Vec<SceneQuad>,
    pub manifest: CorpusManifest,
}

impl Corpus {
    pub fn from_scenes(scenes: Vec<SceneQuad>, params: SceneParams) -> Result<Self> {
        if scenes.is_empty() {
            return Err(Error::data("a corpus needs at least one scene"));
        }
        let mean_hist = |maps: Vec<&ClassMap>| -> Result<Vec<f64>> {
            let mut acc = vec![0.0; maps[0].legend().len()];
            for m in &maps {
                for (a, h) in acc.iter_mut().zip(class_histogram(m)?) {
                    *a += h;
                }
            }
            Ok(acc.into_iter().map(|a| a / maps.len() as f64).collect())
        };
        let manifest = CorpusManifest {
            prng: rng::PRNG_ALGORITHM.to_string(),
            seeds: scenes.iter().map(|s| s.seed).collect(),
            scene_hashes: scenes.iter().map(SceneQuad::content_hash).collect(),
            layout_histogram: mean_hist(scenes.iter().map(|s| &s.layout).collect())?,
            environment_histogram: mean_hist(scenes.iter().map(|s| &s.environment).collect())?,
            params,
        };
        Ok(Self { scenes, manifest })
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    /// Fails unless every park element class reaches `floor` of the corpus
    /// layout area.
    pub fn check_class_floor(&self, floor: f64) -> Result<()> {
        let legend = Legend::park();
        for id in legend.ids_with_role(crate::legend::Role::ParkElement) {
            let f = self.manifest.layout_histogram[id as usize];
            if f < floor {
                return Err(Error::data(format!(
                    "class `{}` covers {f:.4} of the corpus, below floor {floor}",
                    legend.entries[id as usize].name
                )));
            }
        }
        Ok(())
    }

    /// One directory per scene plus `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for s in &self.scenes {
            let d = dir.join(scene_dir_name(s.seed));
            imageio::write_rgb(&d.join("remote.png"), &s.remote)?;
            imageio::write_classmap(&d.join("environment.png"), &s.environment)?;
            imageio::write_classmap(&d.join("layout.png"), &s.layout)?;
            imageio::write_rgb(&d.join("scheme.png"), &s.scheme)?;
            let meta = serde_json::json!({ "seed": s.seed, "site": s.site, "entrance_sides": s.entrance_sides });
            std::fs::write(d.join("scene.json"), serde_json::to_string_pretty(&meta).unwrap())
                .map_err(|e| Error::io(d.join("scene.json"), e))?;
        }
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.manifest).unwrap())
            .map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CorpusManifest = serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let env_legend = Arc::new(Legend::environment());
        let park_legend = Arc::new(Legend::park());
        let mut scenes = Vec::with_capacity(manifest.seeds.len());
        for (&seed, hash) in manifest.seeds.iter().zip(&manifest.scene_hashes) {
            let d = dir.join(scene_dir_name(seed));
            let meta_path = d.join("scene.json");
            let meta: serde_json::Value = serde_json::from_str(
                &std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?,
            )
            .map_err(|e| Error::data(e.to_string()))?;
            let scene = SceneQuad {
                remote: imageio::read_rgb(&d.join("remote.png"))?,
                environment: imageio::read_classmap(&d.join("environment.png"), &env_legend)?,
                layout: imageio::read_classmap(&d.join("layout.png"), &park_legend)?,
                scheme: imageio::read_rgb(&d.join("scheme.png"))?,
                seed,
                site: serde_json::from_value(meta["site"].clone()).map_err(|e| Error::data(e.to_string()))?,
                entrance_sides: serde_json::from_value(meta["entrance_sides"].clone())
                    .map_err(|e| Error::data(e.to_string()))?,
            };
            if &scene.content_hash() != hash {
                return Err(Error::Integrity(format!(
                    "scene {seed} in {} does not match its manifest hash",
                    dir.display()
                )));
            }
            scenes.push(scene);
        }
        Ok(Self { scenes, manifest })
    }
}

fn scene_dir_name(seed: u64) -> String {
    format!("scene_{seed:06}")
}

/// Scenes for seeds `seed..seed + n`, in seed order.
pub fn generate_corpus(n: usize, seed: u64, params: &SceneParams) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::structural("corpus size must be at least 1"));
    }
    let scenes = (seed..seed + n as u64)
        .map(|s| generate_scene(s, params))
        .collect::<Result<Vec<_>>>()?;
    Corpus::from_scenes(scenes, params.clone())
}

/// Deterministic split by seed order: the first `floor(n·f)` scenes train.
pub fn split_corpus(corpus: &Corpus, train_fraction: f64) -> Result<(Corpus, Corpus)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = corpus.len();
    let n_train = (n as f64 * train_fraction + 1e-9).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::data(format!(
            "fraction {train_fraction} of {n} scenes leaves one side empty"
        )));
    }
    let mut scenes = corpus.scenes.clone();
    scenes.sort_by_key(|s| s.seed);
    let test = scenes.split_off(n_train);
    let params = corpus.manifest.params.clone();
    Ok((
        Corpus::from_scenes(scenes, params.clone())?,
        Corpus::from_scenes(test, params)?,
    ))
}
