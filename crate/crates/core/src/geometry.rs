//! Rotated-box and quadrilateral geometry for the detection branch.
//!
//! Conventions: image coordinates have x growing right and y growing down.
//! Quadrilateral corners are ordered clockwise on screen starting at the
//! top-left of the text's reading orientation (positive shoelace sum under
//! y-down coordinates). Angles are measured from the image x-axis to the
//! reading direction, applied through the standard rotation matrix
//! `[[cos, -sin], [sin, cos]]`, so the reading direction is
//! `(cos a, sin a)`.

use crate::error::{Error, Result};

const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Rotate by `angle` with the crate's rotation convention.
    pub fn rotated(self, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

/// Four ordered corner points, clockwise from the top-left of the reading
/// orientation. Construction rejects non-convex or reversed orderings; a
/// zero-area quad is allowed but flagged degenerate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrilateral {
    corners: [Point; 4],
    degenerate: bool,
}

impl Quadrilateral {
    pub fn new(corners: [Point; 4]) -> Result<Self> {
        for p in &corners {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::contract("non-finite quad corner"));
            }
        }
        let area = signed_area(&corners);
        if area.abs() <= DEGENERATE_AREA {
            return Ok(Quadrilateral {
                corners,
                degenerate: true,
            });
        }
        if area < 0.0 {
            return Err(Error::contract(
                "quad corners must be ordered clockwise (positive shoelace under y-down)",
            ));
        }
        // convexity: every consecutive edge pair must turn the same way
        for i in 0..4 {
            let a = corners[i];
            let b = corners[(i + 1) % 4];
            let c = corners[(i + 2) % 4];
            if b.sub(a).cross(c.sub(b)) < 0.0 {
                return Err(Error::contract("non-convex quad rejected"));
            }
        }
        Ok(Quadrilateral {
            corners,
            degenerate: false,
        })
    }

    pub fn from_coords(v: [f64; 8]) -> Result<Self> {
        Quadrilateral::new([
            Point::new(v[0], v[1]),
            Point::new(v[2], v[3]),
            Point::new(v[4], v[5]),
            Point::new(v[6], v[7]),
        ])
    }

    /// Axis-aligned rectangle from opposite corners (any orientation of the
    /// arguments); reading direction is +x.
    pub fn axis_rect(min: Point, max: Point) -> Result<Self> {
        let (x0, x1) = (min.x.min(max.x), min.x.max(max.x));
        let (y0, y1) = (min.y.min(max.y), min.y.max(max.y));
        Quadrilateral::new([
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ])
    }

    pub fn corners(&self) -> &[Point; 4] {
        &self.corners
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn top_left(&self) -> Point {
        self.corners[0]
    }

    /// Unit vector along the top edge (the reading direction).
    pub fn reading_direction(&self) -> Result<Point> {
        let d = self.corners[1].sub(self.corners[0]);
        let n = d.norm();
        if n <= 1e-12 {
            return Err(Error::contract("degenerate quad has no reading direction"));
        }
        Ok(d.scale(1.0 / n))
    }

    pub fn centroid(&self) -> Point {
        let mut acc = Point::new(0.0, 0.0);
        for p in &self.corners {
            acc = acc.add(*p);
        }
        acc.scale(0.25)
    }

    pub fn bounds(&self) -> (Point, Point) {
        let mut min = self.corners[0];
        let mut max = self.corners[0];
        for p in &self.corners[1..] {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        (min, max)
    }

    /// Axis-aligned bounding rectangle as a quad.
    pub fn bounding_rect(&self) -> Result<Quadrilateral> {
        let (min, max) = self.bounds();
        Quadrilateral::axis_rect(min, max)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Quadrilateral {
        let mut c = self.corners;
        for p in &mut c {
            p.x += dx;
            p.y += dy;
        }
        Quadrilateral {
            corners: c,
            degenerate: self.degenerate,
        }
    }

    pub fn scaled(&self, s: f64) -> Quadrilateral {
        let mut c = self.corners;
        for p in &mut c {
            p.x *= s;
            p.y *= s;
        }
        Quadrilateral {
            corners: c,
            degenerate: self.degenerate,
        }
    }

    /// Point-in-quad test (boundary counts as inside). Only meaningful for
    /// convex clockwise quads, which construction guarantees.
    pub fn contains(&self, p: Point) -> bool {
        for i in 0..4 {
            let a = self.corners[i];
            let b = self.corners[(i + 1) % 4];
            if b.sub(a).cross(p.sub(a)) < 0.0 {
                return false;
            }
        }
        true
    }

    /// Serialize as "x1,y1,...,x4,y4".
    pub fn to_csv(&self) -> String {
        let c = &self.corners;
        format!(
            "{},{},{},{},{},{},{},{}",
            c[0].x, c[0].y, c[1].x, c[1].y, c[2].x, c[2].y, c[3].x, c[3].y
        )
    }

    pub fn from_csv(s: &str) -> Result<Self> {
        let vals: Vec<f64> = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad quad coordinate {p:?}")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != 8 {
            return Err(Error::Parse(format!("quad wants 8 coords, got {}", vals.len())));
        }
        Quadrilateral::from_coords(vals.try_into().unwrap())
    }

    pub fn coords(&self) -> [f64; 8] {
        let c = &self.corners;
        [
            c[0].x, c[0].y, c[1].x, c[1].y, c[2].x, c[2].y, c[3].x, c[3].y,
        ]
    }
}

fn signed_area(corners: &[Point; 4]) -> f64 {
    let mut acc = 0.0;
    for i in 0..4 {
        let a = corners[i];
        let b = corners[(i + 1) % 4];
        acc += a.cross(b);
    }
    0.5 * acc
}

/// Five-parameter rotated box: distances from an anchor point to the four
/// sides plus the inclination of the reading direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RBox {
    pub anchor: Point,
    pub dist_top: f64,
    pub dist_bottom: f64,
    pub dist_left: f64,
    pub dist_right: f64,
    /// Radians in (-pi/2, pi/2].
    pub angle: f64,
}

impl RBox {
    pub fn new(
        anchor: Point,
        dist_top: f64,
        dist_bottom: f64,
        dist_left: f64,
        dist_right: f64,
        angle: f64,
    ) -> Result<Self> {
        let dists = [dist_top, dist_bottom, dist_left, dist_right];
        if dists.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::contract("rbox distances must be finite and >= 0"));
        }
        if !(angle.is_finite() && angle > -std::f64::consts::FRAC_PI_2 && angle <= std::f64::consts::FRAC_PI_2)
        {
            return Err(Error::contract("rbox angle must lie in (-pi/2, pi/2]"));
        }
        Ok(RBox {
            anchor,
            dist_top,
            dist_bottom,
            dist_left,
            dist_right,
            angle,
        })
    }

    pub fn height(&self) -> f64 {
        self.dist_top + self.dist_bottom
    }

    pub fn width(&self) -> f64 {
        self.dist_left + self.dist_right
    }
}

/// A detection candidate: quad plus score in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredQuad {
    pub quad: Quadrilateral,
    pub score: f64,
}

impl ScoredQuad {
    pub fn new(quad: Quadrilateral, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::contract(format!("score {score} outside [0,1]")));
        }
        Ok(ScoredQuad { quad, score })
    }
}

/// Expand a rotated box into its quadrilateral.
///
/// In the box's local frame the corners sit at (-left,-top), (+right,-top),
/// (+right,+bottom), (-left,+bottom) relative to the anchor, then rotate by
/// `angle` back into the image frame. A zero-area box decodes to a quad with
/// the degenerate flag set rather than an error.
pub fn decode_rbox(r: &RBox) -> Quadrilateral {
    let local = [
        Point::new(-r.dist_left, -r.dist_top),
        Point::new(r.dist_right, -r.dist_top),
        Point::new(r.dist_right, r.dist_bottom),
        Point::new(-r.dist_left, r.dist_bottom),
    ];
    let mut corners = [Point::new(0.0, 0.0); 4];
    for (c, l) in corners.iter_mut().zip(&local) {
        *c = r.anchor.add(l.rotated(r.angle));
    }
    let degenerate = r.height() <= 0.0 || r.width() <= 0.0;
    Quadrilateral { corners, degenerate }
}

/// Re-measure the five parameters of a (rectangular) quad relative to an
/// anchor point; inverse of [`decode_rbox`].
pub fn encode_rbox(q: &Quadrilateral, anchor: Point) -> Result<RBox> {
    let u = q.reading_direction()?;
    let angle = u.y.atan2(u.x);
    // local coordinates of opposite corners relative to the anchor
    let tl = q.corners[0].sub(anchor).rotated(-angle);
    let br = q.corners[2].sub(anchor).rotated(-angle);
    RBox::new(anchor, -tl.y, br.y, -tl.x, br.x, angle)
}

/// Shoelace area (absolute value).
pub fn quad_area(q: &Quadrilateral) -> f64 {
    signed_area(&q.corners).abs()
}

fn polygon_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a.cross(b);
    }
    (0.5 * acc).abs()
}

/// Clip `subject` by the half-plane on the inner side of directed edge a->b
/// of a clockwise (y-down) convex polygon.
fn clip_halfplane(subject: &[Point], a: Point, b: Point) -> Vec<Point> {
    let mut out = Vec::with_capacity(subject.len() + 1);
    let n = subject.len();
    if n == 0 {
        return out;
    }
    let side = |p: Point| b.sub(a).cross(p.sub(a));
    for i in 0..n {
        let s = subject[i];
        let e = subject[(i + 1) % n];
        let sc = side(s);
        let ec = side(e);
        let s_in = sc >= 0.0;
        let e_in = ec >= 0.0;
        match (s_in, e_in) {
            (true, true) => out.push(e),
            (true, false) => {
                let denom = sc - ec;
                if denom.abs() > 1e-30 {
                    let t = sc / denom;
                    out.push(Point::new(s.x + (e.x - s.x) * t, s.y + (e.y - s.y) * t));
                }
            }
            (false, true) => {
                let denom = sc - ec;
                if denom.abs() > 1e-30 {
                    let t = sc / denom;
                    out.push(Point::new(s.x + (e.x - s.x) * t, s.y + (e.y - s.y) * t));
                }
                out.push(e);
            }
            (false, false) => {}
        }
    }
    out
}

/// Intersection area of two convex clockwise quads (Sutherland–Hodgman).
pub fn quad_intersection_area(a: &Quadrilateral, b: &Quadrilateral) -> f64 {
    let mut poly: Vec<Point> = a.corners.to_vec();
    for i in 0..4 {
        poly = clip_halfplane(&poly, b.corners[i], b.corners[(i + 1) % 4]);
        if poly.len() < 3 {
            return 0.0;
        }
    }
    polygon_area(&poly)
}

/// Intersection-over-union of two convex quads. Symmetric; two degenerate
/// inputs give 0.
pub fn quad_iou(a: &Quadrilateral, b: &Quadrilateral) -> f64 {
    let area_a = quad_area(a);
    let area_b = quad_area(b);
    if area_a <= 0.0 && area_b <= 0.0 {
        return 0.0;
    }
    let inter = quad_intersection_area(a, b);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

fn corner_order(a: &Quadrilateral, b: &Quadrilateral) -> std::cmp::Ordering {
    for (pa, pb) in a.corners.iter().zip(&b.corners) {
        match pa.x.partial_cmp(&pb.x).unwrap() {
            std::cmp::Ordering::Equal => {}
            o => return o,
        }
        match pa.y.partial_cmp(&pb.y).unwrap() {
            std::cmp::Ordering::Equal => {}
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Greedy non-maximum suppression.
///
/// Boxes are visited in descending score order (score ties broken by
/// lexicographic corner comparison for determinism); a box is kept when its
/// IoU with every already-kept box is <= `iou_threshold`. The result is
/// sorted by descending score.
pub fn nms(boxes: &[ScoredQuad], iou_threshold: f64) -> Result<Vec<ScoredQuad>> {
    if !(0.0 < iou_threshold && iou_threshold < 1.0) {
        return Err(Error::contract(format!(
            "nms threshold {iou_threshold} outside (0,1)"
        )));
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| {
        boxes[j]
            .score
            .partial_cmp(&boxes[i].score)
            .unwrap()
            .then_with(|| corner_order(&boxes[i].quad, &boxes[j].quad))
    });
    let mut kept: Vec<ScoredQuad> = Vec::new();
    for &i in &order {
        let candidate = &boxes[i];
        if kept
            .iter()
            .all(|k| quad_iou(&k.quad, &candidate.quad) <= iou_threshold)
        {
            kept.push(*candidate);
        }
    }
    Ok(kept)
}

/// Signed coordinate of `p` along the reading direction of `q`, measured
/// from q's top-left corner.
pub fn project_onto_axis(p: Point, q: &Quadrilateral) -> Result<f64> {
    let u = q.reading_direction()?;
    Ok(p.sub(q.top_left()).dot(u))
}
