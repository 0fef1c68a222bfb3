//! Glyph renderer: each vehicle type maps to a distinct silhouette, the
//! body takes the catalog RGB, and a marker arrow encodes the orientation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::VtiError;
use crate::corpus::EntityClass;
use crate::generator::AttributeCatalog;
use crate::ner::TripleKeyword;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::util::stream_rng;

/// Pose and noise perturbations, in unit coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub dx: f32,
    pub dy: f32,
    pub scale: f32,
    pub noise: f32,
}

impl Jitter {
    pub fn sample(rng: &mut ChaCha8Rng) -> Jitter {
        Jitter {
            dx: rng.gen_range(-0.06..=0.06),
            dy: rng.gen_range(-0.06..=0.06),
            scale: rng.gen_range(0.82..=1.10),
            noise: rng.gen_range(0.0..=0.5),
        }
    }
}

/// Ground truth for one rendered proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub vtype: EntityClass,
    pub color: String,
    pub orientation: String,
    pub jitter: Jitter,
    pub seed: u64,
}

impl RenderSpec {
    /// Uniformly sampled attributes with fresh jitter.
    pub fn sample(catalog: &AttributeCatalog, rng: &mut ChaCha8Rng) -> RenderSpec {
        use crate::corpus::FINE_CLASSES;
        let vtype = FINE_CLASSES[rng.gen_range(0..FINE_CLASSES.len())];
        let color = catalog.colors[rng.gen_range(0..catalog.colors.len())].name.clone();
        let orientation =
            catalog.orientations[rng.gen_range(0..catalog.orientations.len())].name.clone();
        RenderSpec::with_attrs(vtype, color, orientation, rng)
    }

    pub fn with_attrs(
        vtype: EntityClass,
        color: String,
        orientation: String,
        rng: &mut ChaCha8Rng,
    ) -> RenderSpec {
        RenderSpec {
            vtype,
            color,
            orientation,
            jitter: Jitter::sample(rng),
            seed: rng.gen(),
        }
    }

    /// The full (no-missing) triple describing this proposal.
    pub fn triple(&self) -> TripleKeyword {
        TripleKeyword {
            vtype: self.vtype.type_surface(),
            color: Some(self.color.clone()),
            orientation: Some(self.orientation.clone()),
        }
    }
}

struct Canvas {
    size: usize,
    px: Vec<f32>,
}

impl Canvas {
    fn new(size: usize) -> Canvas {
        Canvas {
            size,
            px: vec![0.0; 3 * size * size],
        }
    }

    fn put(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let plane = self.size * self.size;
        let idx = y * self.size + x;
        for c in 0..3 {
            self.px[c * plane + idx] = rgb[c].clamp(0.0, 1.0);
        }
    }

    fn fill_rect(&mut self, x0: f32, y0: f32, x1: f32, y1: f32, rgb: [f32; 3], jitter: &mut dyn FnMut() -> f32) {
        let size = self.size as f32;
        let xa = (x0.max(0.0) * size) as usize;
        let xb = ((x1.min(1.0) * size) as usize).min(self.size);
        let ya = (y0.max(0.0) * size) as usize;
        let yb = ((y1.min(1.0) * size) as usize).min(self.size);
        for y in ya..yb {
            for x in xa..xb {
                let n = jitter();
                self.put(x, y, [rgb[0] + n, rgb[1] + n, rgb[2] + n]);
            }
        }
    }

    fn fill_ellipse(&mut self, cx: f32, cy: f32, rx: f32, ry: f32, rgb: [f32; 3], jitter: &mut dyn FnMut() -> f32) {
        let size = self.size as f32;
        let xa = (((cx - rx).max(0.0)) * size) as usize;
        let xb = ((((cx + rx).min(1.0)) * size) as usize).min(self.size);
        let ya = (((cy - ry).max(0.0)) * size) as usize;
        let yb = ((((cy + ry).min(1.0)) * size) as usize).min(self.size);
        for y in ya..yb {
            for x in xa..xb {
                let ux = (x as f32 + 0.5) / size;
                let uy = (y as f32 + 0.5) / size;
                let nx = (ux - cx) / rx;
                let ny = (uy - cy) / ry;
                if nx * nx + ny * ny <= 1.0 {
                    let n = jitter();
                    self.put(x, y, [rgb[0] + n, rgb[1] + n, rgb[2] + n]);
                }
            }
        }
    }

    fn fill_triangle(&mut self, a: (f32, f32), b: (f32, f32), c: (f32, f32), rgb: [f32; 3]) {
        let size = self.size as f32;
        let min_x = a.0.min(b.0).min(c.0).max(0.0);
        let max_x = a.0.max(b.0).max(c.0).min(1.0);
        let min_y = a.1.min(b.1).min(c.1).max(0.0);
        let max_y = a.1.max(b.1).max(c.1).min(1.0);
        let edge = |p: (f32, f32), q: (f32, f32), r: (f32, f32)| {
            (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0)
        };
        for y in (min_y * size) as usize..((max_y * size) as usize).min(self.size) {
            for x in (min_x * size) as usize..((max_x * size) as usize).min(self.size) {
                let p = ((x as f32 + 0.5) / size, (y as f32 + 0.5) / size);
                let d0 = edge(a, b, p);
                let d1 = edge(b, c, p);
                let d2 = edge(c, a, p);
                let neg = d0 < 0.0 || d1 < 0.0 || d2 < 0.0;
                let pos = d0 > 0.0 || d1 > 0.0 || d2 > 0.0;
                if !(neg && pos) {
                    self.put(x, y, rgb);
                }
            }
        }
    }
}

// Utility tones sit outside the vote radius of every catalog color.
const WHEEL: [f32; 3] = [0.13, 0.13, 0.16];
const WINDOW: [f32; 3] = [0.82, 0.88, 0.95];
const MARKER_BG: [f32; 3] = [0.13, 0.13, 0.16];
const MARKER_FG: [f32; 3] = [1.0, 0.85, 0.0];

/// Renders one proposal at the default 64x64 resolution.
pub fn render_proposal<S: Scalar>(
    spec: &RenderSpec,
    catalog: &AttributeCatalog,
) -> Result<Tensor<S>, VtiError> {
    render_proposal_sized(spec, catalog, 64)
}

/// Renders one proposal. Deterministic in the spec: the background and
/// body noise derive from the spec seed.
pub fn render_proposal_sized<S: Scalar>(
    spec: &RenderSpec,
    catalog: &AttributeCatalog,
    size: usize,
) -> Result<Tensor<S>, VtiError> {
    let color = catalog
        .color_by_surface(&spec.color)
        .ok_or_else(|| VtiError::Render(format!("no rendering rule for color `{}`", spec.color)))?;
    if !spec.vtype.is_fine() {
        return Err(VtiError::Render(format!(
            "`{}` is not a vehicle type",
            spec.vtype.tag()
        )));
    }
    if catalog.orientation_by_surface(&spec.orientation).is_none() {
        return Err(VtiError::Render(format!(
            "no rendering rule for orientation `{}`",
            spec.orientation
        )));
    }
    let rgb = [
        color.rgb[0] as f32 / 255.0,
        color.rgb[1] as f32 / 255.0,
        color.rgb[2] as f32 / 255.0,
    ];

    let mut rng = stream_rng(spec.seed, 0);
    let mut canvas = Canvas::new(size);
    // Spread-spectrum background so no single background color can outvote
    // the body in a nearest-color poll.
    for i in 0..canvas.px.len() {
        canvas.px[i] = rng.gen_range(0.30f32..0.80);
        let _ = i;
    }

    let body_amp = 0.015 + 0.015 * spec.jitter.noise;
    let mut body_rng = stream_rng(spec.seed, 1);
    let mut body_noise = move || body_rng.gen_range(-body_amp..=body_amp);

    let j = spec.jitter;
    let tx = |x: f32| (x - 0.5) * j.scale + 0.5 + j.dx;
    let ty = |y: f32| (y - 0.5) * j.scale + 0.52 + j.dy;

    draw_vehicle(&mut canvas, spec.vtype, rgb, &tx, &ty, &mut body_noise);
    draw_marker(&mut canvas, &spec.orientation, &tx, &ty);

    let data: Vec<S> = canvas.px.iter().map(|&p| S::from_f64(p as f64)).collect();
    Ok(Tensor::from_vec(&[3, size, size], data).expect("canvas size"))
}

fn draw_vehicle(
    canvas: &mut Canvas,
    vtype: EntityClass,
    rgb: [f32; 3],
    tx: &impl Fn(f32) -> f32,
    ty: &impl Fn(f32) -> f32,
    noise: &mut impl FnMut() -> f32,
) {
    let rect = |c: &mut Canvas, x0: f32, y0: f32, x1: f32, y1: f32, color: [f32; 3], n: &mut dyn FnMut() -> f32| {
        c.fill_rect(tx(x0), ty(y0), tx(x1), ty(y1), color, n);
    };
    let ellipse = |c: &mut Canvas, cx: f32, cy: f32, rx: f32, ry: f32, color: [f32; 3], n: &mut dyn FnMut() -> f32| {
        // Radii scale with the same jitter factor as positions.
        let sx = tx(cx + rx) - tx(cx);
        let sy = ty(cy + ry) - ty(cy);
        c.fill_ellipse(tx(cx), ty(cy), sx, sy, color, n);
    };
    let mut flat = || 0.0f32;

    let wheels = |c: &mut Canvas, x_left: f32, x_right: f32, y: f32, r: f32, n: &mut dyn FnMut() -> f32| {
        let sx = tx(x_left + r) - tx(x_left);
        let sy = ty(y + r) - ty(y);
        c.fill_ellipse(tx(x_left), ty(y), sx, sy, WHEEL, n);
        c.fill_ellipse(tx(x_right), ty(y), sx, sy, WHEEL, n);
    };

    use EntityClass::*;
    match vtype {
        TypeSedan => {
            rect(canvas, 0.20, 0.56, 0.80, 0.72, rgb, noise);
            rect(canvas, 0.34, 0.43, 0.66, 0.56, rgb, noise);
            rect(canvas, 0.38, 0.46, 0.62, 0.54, WINDOW, &mut flat);
            wheels(canvas, 0.30, 0.70, 0.74, 0.055, noise);
        }
        TypeSuv => {
            rect(canvas, 0.21, 0.48, 0.79, 0.72, rgb, noise);
            rect(canvas, 0.30, 0.36, 0.72, 0.48, rgb, noise);
            rect(canvas, 0.34, 0.39, 0.68, 0.46, WINDOW, &mut flat);
            rect(canvas, 0.30, 0.33, 0.72, 0.35, WHEEL, &mut flat);
            wheels(canvas, 0.31, 0.69, 0.75, 0.06, noise);
        }
        TypeMotorcycle => {
            rect(canvas, 0.30, 0.50, 0.70, 0.62, rgb, noise);
            ellipse(canvas, 0.5, 0.40, 0.09, 0.10, rgb, noise);
            wheels(canvas, 0.30, 0.70, 0.68, 0.085, noise);
        }
        TypeSportsCar => {
            rect(canvas, 0.18, 0.60, 0.82, 0.70, rgb, noise);
            rect(canvas, 0.38, 0.52, 0.62, 0.60, rgb, noise);
            rect(canvas, 0.42, 0.54, 0.58, 0.59, WINDOW, &mut flat);
            rect(canvas, 0.76, 0.54, 0.84, 0.57, rgb, noise);
            wheels(canvas, 0.30, 0.70, 0.72, 0.05, noise);
        }
        TypeHatchback => {
            rect(canvas, 0.26, 0.55, 0.74, 0.72, rgb, noise);
            rect(canvas, 0.42, 0.42, 0.74, 0.55, rgb, noise);
            rect(canvas, 0.46, 0.45, 0.70, 0.53, WINDOW, &mut flat);
            wheels(canvas, 0.34, 0.66, 0.74, 0.055, noise);
        }
        TypeVintageCar => {
            rect(canvas, 0.22, 0.56, 0.78, 0.68, rgb, noise);
            rect(canvas, 0.38, 0.40, 0.58, 0.56, rgb, noise);
            rect(canvas, 0.41, 0.43, 0.55, 0.52, WINDOW, &mut flat);
            ellipse(canvas, 0.28, 0.68, 0.085, 0.055, rgb, noise);
            ellipse(canvas, 0.72, 0.68, 0.085, 0.055, rgb, noise);
            wheels(canvas, 0.28, 0.72, 0.73, 0.06, noise);
        }
        TypeCoupe => {
            rect(canvas, 0.20, 0.58, 0.80, 0.71, rgb, noise);
            rect(canvas, 0.30, 0.47, 0.68, 0.58, rgb, noise);
            rect(canvas, 0.34, 0.50, 0.64, 0.56, WINDOW, &mut flat);
            wheels(canvas, 0.30, 0.70, 0.73, 0.05, noise);
        }
        TypeTruck => {
            rect(canvas, 0.16, 0.46, 0.34, 0.72, rgb, noise);
            rect(canvas, 0.20, 0.50, 0.30, 0.58, WINDOW, &mut flat);
            rect(canvas, 0.38, 0.40, 0.86, 0.72, rgb, noise);
            wheels(canvas, 0.25, 0.72, 0.75, 0.06, noise);
        }
        TypeVan => {
            rect(canvas, 0.22, 0.40, 0.78, 0.72, rgb, noise);
            rect(canvas, 0.26, 0.44, 0.40, 0.54, WINDOW, &mut flat);
            wheels(canvas, 0.32, 0.68, 0.74, 0.055, noise);
        }
        TypeMpv => {
            rect(canvas, 0.24, 0.44, 0.76, 0.72, rgb, noise);
            ellipse(canvas, 0.50, 0.44, 0.26, 0.07, rgb, noise);
            rect(canvas, 0.30, 0.48, 0.70, 0.55, WINDOW, &mut flat);
            wheels(canvas, 0.33, 0.67, 0.74, 0.055, noise);
        }
        TypeEstateCar => {
            rect(canvas, 0.18, 0.56, 0.82, 0.72, rgb, noise);
            rect(canvas, 0.34, 0.44, 0.80, 0.56, rgb, noise);
            rect(canvas, 0.38, 0.47, 0.76, 0.54, WINDOW, &mut flat);
            wheels(canvas, 0.28, 0.72, 0.74, 0.055, noise);
        }
        TypeBus => {
            rect(canvas, 0.12, 0.36, 0.88, 0.72, rgb, noise);
            for i in 0..4 {
                let x = 0.18 + i as f32 * 0.17;
                rect(canvas, x, 0.42, x + 0.10, 0.52, WINDOW, &mut flat);
            }
            wheels(canvas, 0.26, 0.74, 0.74, 0.055, noise);
        }
        TypeRoadster => {
            rect(canvas, 0.22, 0.60, 0.78, 0.71, rgb, noise);
            rect(canvas, 0.40, 0.55, 0.46, 0.60, WINDOW, &mut flat);
            rect(canvas, 0.48, 0.57, 0.66, 0.60, WHEEL, &mut flat);
            wheels(canvas, 0.32, 0.68, 0.73, 0.05, noise);
        }
        _ => unreachable!("render only covers fine vehicle types"),
    }
}

fn draw_marker(canvas: &mut Canvas, orientation: &str, tx: &impl Fn(f32) -> f32, ty: &impl Fn(f32) -> f32) {
    let cx = 0.5;
    let cy = 0.16;
    let mut flat = || 0.0f32;
    canvas.fill_rect(tx(cx - 0.11), ty(cy - 0.07), tx(cx + 0.11), ty(cy + 0.07), MARKER_BG, &mut flat);
    let (a, b, c) = match orientation {
        "left" => ((cx + 0.07, cy - 0.05), (cx + 0.07, cy + 0.05), (cx - 0.08, cy)),
        "right" => ((cx - 0.07, cy - 0.05), (cx - 0.07, cy + 0.05), (cx + 0.08, cy)),
        // Towards the camera points down, away points up.
        "towards" => ((cx - 0.06, cy - 0.05), (cx + 0.06, cy - 0.05), (cx, cy + 0.06)),
        _ => ((cx - 0.06, cy + 0.05), (cx + 0.06, cy + 0.05), (cx, cy - 0.06)),
    };
    canvas.fill_triangle(
        (tx(a.0), ty(a.1)),
        (tx(b.0), ty(b.1)),
        (tx(c.0), ty(c.1)),
        MARKER_FG,
    );
}

/// Majority vote of pixels over nearest catalog colors; pixels farther
/// than 0.06 (max-channel distance) from every entry abstain, which keeps
/// the spread-spectrum background from outvoting the body.
pub fn dominant_color<S: Scalar>(
    image: &Tensor<S>,
    catalog: &AttributeCatalog,
) -> Option<String> {
    let (h, w) = match image.shape() {
        [3, h, w] => (*h, *w),
        _ => return None,
    };
    let plane = h * w;
    let mut votes = vec![0usize; catalog.colors.len()];
    for i in 0..plane {
        let px = [
            image.data()[i].to_f64(),
            image.data()[plane + i].to_f64(),
            image.data()[2 * plane + i].to_f64(),
        ];
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (ci, color) in catalog.colors.iter().enumerate() {
            let d = (0..3)
                .map(|k| (px[k] - color.rgb[k] as f64 / 255.0).abs())
                .fold(0.0, f64::max);
            if d < best_d {
                best_d = d;
                best = Some(ci);
            }
        }
        if best_d < 0.06 {
            if let Some(ci) = best {
                votes[ci] += 1;
            }
        }
    }
    let (winner, &count) = votes.iter().enumerate().max_by_key(|(_, &v)| v)?;
    (count > 0).then(|| catalog.colors[winner].name.clone())
}

/// Renders the full scene canvas with each proposal tile pasted at its
/// bounding box, so a crop equals the stand-alone proposal rendering.
pub fn render_scene_canvas<S: Scalar>(
    scene: &super::SceneRecord,
    catalog: &AttributeCatalog,
    canvas_size: usize,
) -> Result<Tensor<S>, VtiError> {
    let mut rng = stream_rng(scene.frame_id, 0xcafe);
    let mut data = vec![S::zero(); 3 * canvas_size * canvas_size];
    for v in data.iter_mut() {
        *v = S::from_f64(rng.gen_range(0.30f64..0.80));
    }
    let plane = canvas_size * canvas_size;
    for proposal in &scene.proposals {
        let (left, top, w, h) = proposal.bbox;
        let tile: Tensor<S> = render_proposal_sized(&proposal.spec, catalog, w as usize)?;
        if h != w || left as usize + w as usize > canvas_size || top as usize + h as usize > canvas_size
        {
            return Err(VtiError::Render("proposal bbox out of canvas".into()));
        }
        let size = w as usize;
        for c in 0..3 {
            for y in 0..size {
                for x in 0..size {
                    data[c * plane + (top as usize + y) * canvas_size + left as usize + x] =
                        tile.data()[c * size * size + y * size + x];
                }
            }
        }
    }
    Ok(Tensor::from_vec(&[3, canvas_size, canvas_size], data).expect("canvas dims"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> AttributeCatalog {
        AttributeCatalog::default_catalog()
    }

    fn spec(vtype: EntityClass, color: &str, orientation: &str, seed: u64) -> RenderSpec {
        let mut rng = stream_rng(seed, 99);
        RenderSpec::with_attrs(vtype, color.into(), orientation.into(), &mut rng)
    }

    #[test]
    fn rendering_is_deterministic_per_spec() {
        let cat = catalog();
        let s = spec(EntityClass::TypeSedan, "red", "left", 7);
        let a: Tensor<f32> = render_proposal(&s, &cat).unwrap();
        let b: Tensor<f32> = render_proposal(&s, &cat).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[3, 64, 64]);
    }

    #[test]
    fn different_seeds_same_dominant_color() {
        let cat = catalog();
        let a = spec(EntityClass::TypeSedan, "red", "left", 1);
        let b = spec(EntityClass::TypeSedan, "red", "left", 2);
        assert_ne!(a.jitter.dx, b.jitter.dx);
        let ia: Tensor<f32> = render_proposal(&a, &cat).unwrap();
        let ib: Tensor<f32> = render_proposal(&b, &cat).unwrap();
        assert_ne!(ia, ib);
        assert_eq!(dominant_color(&ia, &cat).as_deref(), Some("red"));
        assert_eq!(dominant_color(&ib, &cat).as_deref(), Some("red"));
    }

    #[test]
    fn white_body_is_brighter_than_black() {
        let cat = catalog();
        let white: Tensor<f32> =
            render_proposal(&spec(EntityClass::TypeSedan, "white", "left", 3), &cat).unwrap();
        let black: Tensor<f32> =
            render_proposal(&spec(EntityClass::TypeSedan, "black", "left", 3), &cat).unwrap();
        let mean = |t: &Tensor<f32>| t.data().iter().sum::<f32>() / t.numel() as f32;
        assert!(mean(&white) > mean(&black) + 0.05);
    }

    #[test]
    fn body_pixels_stay_within_ten_percent_of_the_table_rgb() {
        let cat = catalog();
        for (i, color) in ["blue", "green", "charcoal", "ivory"].iter().enumerate() {
            let s = spec(EntityClass::TypeBus, color, "towards", 20 + i as u64);
            let img: Tensor<f32> = render_proposal(&s, &cat).unwrap();
            let entry = cat.color_by_surface(color).unwrap();
            let want = [
                entry.rgb[0] as f32 / 255.0,
                entry.rgb[1] as f32 / 255.0,
                entry.rgb[2] as f32 / 255.0,
            ];
            let plane = 64 * 64;
            let close = (0..plane)
                .filter(|&p| {
                    (0..3).all(|c| (img.data()[c * plane + p] - want[c]).abs() < 0.1)
                })
                .count();
            // The bus body is the biggest glyph; expect a solid share of
            // pixels within 10% of the table value.
            assert!(close > plane / 8, "{color}: only {close} close pixels");
            assert_eq!(dominant_color(&img, &cat).as_deref(), Some(*color));
        }
    }

    #[test]
    fn unknown_attributes_are_render_errors() {
        let cat = catalog();
        let mut s = spec(EntityClass::TypeSedan, "red", "left", 5);
        s.color = "plaid".into();
        assert!(matches!(
            render_proposal::<f32>(&s, &cat),
            Err(VtiError::Render(_))
        ));
        let mut s2 = spec(EntityClass::TypeSedan, "red", "left", 5);
        s2.orientation = "sideways".into();
        assert!(render_proposal::<f32>(&s2, &cat).is_err());
    }

    #[test]
    fn color_probe_classifies_a_sweep_of_renders() {
        let cat = catalog();
        let mut rng = stream_rng(42, 0);
        let mut correct = 0;
        let total = 200;
        for _ in 0..total {
            let s = RenderSpec::sample(&cat, &mut rng);
            let img: Tensor<f32> = render_proposal(&s, &cat).unwrap();
            if dominant_color(&img, &cat).as_deref() == Some(s.color.as_str()) {
                correct += 1;
            }
        }
        assert!(
            correct as f64 / total as f64 >= 0.95,
            "{correct}/{total} colors classified"
        );
    }
}
