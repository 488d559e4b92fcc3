//! Exact one-dimensional distribution algebra.
//!
//! A [`Density1D`] is a piecewise-polynomial density on a bounded support plus
//! a list of point masses. Polynomials are stored in the local variable
//! `t − lo` of their segment, which keeps coefficients well conditioned on the
//! narrow supports that expected-utility distributions tend to have.
//!
//! Affine maps, independent sums and mixtures are closed-form. `E[max]`
//! integrals are evaluated exactly while the polynomial degree stays within
//! [`DEGREE_CAP`], and by adaptive Gauss–Kronrod quadrature between
//! breakpoints otherwise.

pub mod poly;
pub mod quad;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use poly::Poly;

/// Highest polynomial degree allowed in a segment or in a product of CDFs
/// integrated in closed form.
pub const DEGREE_CAP: usize = 6;

/// Input densities within this distance of unit mass are renormalized.
pub const MASS_TOL: f64 = 1e-6;

/// Lowest density value tolerated on a segment.
pub const NEG_TOL: f64 = -1e-12;

const QUAD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("support bounds must satisfy lo < hi (got lo = {lo}, hi = {hi})")]
    InvalidSupport { lo: f64, hi: f64 },
    #[error("mode {mode} outside [{lo}, {hi}]")]
    ModeOutside { lo: f64, mode: f64, hi: f64 },
    #[error("density is negative ({value:e}) near t = {at}")]
    NegativeDensity { at: f64, value: f64 },
    #[error("total mass {mass} deviates from 1 beyond tolerance")]
    Mass { mass: f64 },
    #[error("polynomial degree {degree} exceeds the cap of {DEGREE_CAP}")]
    DegreeCap { degree: usize },
    #[error("affine scale must be non-zero")]
    ZeroScale,
    #[error("mixture weights must be non-negative and sum to 1 (sum = {sum})")]
    Weights { sum: f64 },
    #[error("segments overlap or are unsorted near {at}")]
    Overlap { at: f64 },
    #[error("non-finite parameter")]
    NonFinite,
    #[error("distribution has no mass")]
    Empty,
}

/// One polynomial piece, `density(t) = poly(t − lo)` on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub lo: f64,
    pub hi: f64,
    pub coeffs: Poly,
}

impl Segment {
    fn mass(&self) -> f64 {
        self.coeffs.integral(0.0, self.hi - self.lo)
    }

    fn first_moment(&self) -> f64 {
        // ∫ (lo + s) p(s) ds
        let w = self.hi - self.lo;
        self.lo * self.mass() + self.coeffs.mul(&Poly::linear(0.0, 1.0)).integral(0.0, w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub at: f64,
    pub mass: f64,
}

/// Literal description of a density as it appears in input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum DensitySpec {
    Point {
        at: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    Triangular {
        lo: f64,
        mode: f64,
        hi: f64,
    },
    Piecewise {
        segments: Vec<Segment>,
        #[serde(default)]
        atoms: Vec<Atom>,
    },
}

/// Piecewise-polynomial density with point masses on a bounded support.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Density1D {
    segments: Vec<Segment>,
    atoms: Vec<Atom>,
}

fn finite(xs: &[f64]) -> Result<(), DistError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(DistError::NonFinite)
    }
}

fn merge_eps(z: f64) -> f64 {
    1e-12 * z.abs().max(1.0)
}

fn merge_atoms(mut atoms: Vec<Atom>) -> Vec<Atom> {
    atoms.retain(|a| a.mass > 0.0);
    atoms.sort_by(|a, b| a.at.total_cmp(&b.at));
    let mut out: Vec<Atom> = Vec::with_capacity(atoms.len());
    for a in atoms {
        match out.last_mut() {
            Some(last) if (a.at - last.at).abs() <= merge_eps(a.at) => last.mass += a.mass,
            _ => out.push(a),
        }
    }
    out
}

/// Sums overlapping polynomial pieces into non-overlapping segments on the
/// union of their breakpoints. Breakpoints closer than ~1e-12 are merged.
fn assemble(pieces: Vec<Segment>) -> Vec<Segment> {
    if pieces.is_empty() {
        return Vec::new();
    }
    let mut cuts: Vec<f64> = pieces.iter().flat_map(|p| [p.lo, p.hi]).collect();
    cuts.sort_by(f64::total_cmp);
    let mut grid: Vec<f64> = Vec::with_capacity(cuts.len());
    for z in cuts {
        match grid.last() {
            Some(&last) if z - last <= merge_eps(z) => {}
            _ => grid.push(z),
        }
    }
    let locate = |z: f64| -> usize {
        let i = grid.partition_point(|&g| g < z);
        if i == 0 {
            0
        } else if i == grid.len() || (z - grid[i - 1]) <= (grid[i] - z) {
            i - 1
        } else {
            i
        }
    };
    let mut acc: Vec<Option<Poly>> = vec![None; grid.len().saturating_sub(1)];
    for piece in &pieces {
        let (i0, i1) = (locate(piece.lo), locate(piece.hi));
        for (k, slot) in acc.iter_mut().enumerate().take(i1).skip(i0) {
            let local = piece.coeffs.shift(grid[k] - piece.lo);
            match slot {
                Some(p) => p.add_assign(&local),
                None => *slot = Some(local),
            }
        }
    }
    acc.into_iter()
        .enumerate()
        .filter_map(|(k, p)| {
            p.map(|coeffs| Segment {
                lo: grid[k],
                hi: grid[k + 1],
                coeffs,
            })
        })
        .collect()
}

/// Splits segments at interior atom locations so that segments and atoms
/// can be ordered along the line.
fn split_at_atoms(segments: Vec<Segment>, atoms: &[Atom]) -> Vec<Segment> {
    if atoms.is_empty() {
        return segments;
    }
    let mut out = Vec::with_capacity(segments.len());
    for s in segments {
        let mut lo = s.lo;
        let mut coeffs = s.coeffs;
        for a in atoms {
            if a.at > lo + merge_eps(a.at) && a.at < s.hi - merge_eps(a.at) {
                let next = coeffs.shift(a.at - lo);
                out.push(Segment {
                    lo,
                    hi: a.at,
                    coeffs,
                });
                lo = a.at;
                coeffs = next;
            }
        }
        out.push(Segment { lo, hi: s.hi, coeffs });
    }
    out
}

/// Closed-form density of the sum of two independent polynomial pieces
/// `p` on `[0, wa]` and `q` on `[0, wc]`, returned in pair-local coordinates.
fn convolve_pieces(p: &Poly, wa: f64, q: &Poly, wc: f64) -> Vec<(f64, f64, Poly)> {
    // Bivariate integrand p(u)·q(w − u) = Σ c[i][j] w^i u^j.
    let dp = p.degree();
    let dq = q.degree();
    let mut c = vec![vec![0.0; dp + dq + 1]; dq + 1];
    for (i, &a) in p.coeffs().iter().enumerate() {
        for (j, &b) in q.coeffs().iter().enumerate() {
            for r in 0..=j {
                let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
                c[j - r][i + r] += a * b * poly::binomial(j, r) * sign;
            }
        }
    }
    let knots = [0.0, wa.min(wc), wa.max(wc), wa + wc];
    let mut out = Vec::new();
    for win in knots.windows(2) {
        let (w0, w1) = (win[0], win[1]);
        if w1 - w0 <= 0.0 {
            continue;
        }
        let mid = 0.5 * (w0 + w1);
        // Integration limits in u, as linear functions of w.
        let lower = if mid > wc { (-wc, 1.0) } else { (0.0, 0.0) };
        let upper = if mid < wa { (0.0, 1.0) } else { (wa, 0.0) };
        // Work in s = w − w0.
        let w = Poly::linear(w0, 1.0);
        let lo_s = Poly::linear(lower.0 + lower.1 * w0, lower.1);
        let hi_s = Poly::linear(upper.0 + upper.1 * w0, upper.1);
        let mut h = Poly::zero();
        for (pw, row) in c.iter().enumerate() {
            let wp = w.powi(pw);
            for (qu, &coef) in row.iter().enumerate() {
                if coef == 0.0 {
                    continue;
                }
                let k = qu + 1;
                let diff = hi_s.powi(k).add(&lo_s.powi(k).scale(-1.0));
                h.add_assign(&wp.mul(&diff).scale(coef / k as f64));
            }
        }
        h.0.truncate(dp + dq + 2);
        out.push((w0, w1, h));
    }
    out
}

impl Density1D {
    fn from_raw(segments: Vec<Segment>, atoms: Vec<Atom>) -> Self {
        let atoms = merge_atoms(atoms);
        Self {
            segments: split_at_atoms(segments, &atoms),
            atoms,
        }
    }

    /// Point mass at `c`.
    pub fn point(c: f64) -> Result<Self, DistError> {
        finite(&[c])?;
        Ok(Self {
            segments: Vec::new(),
            atoms: vec![Atom { at: c, mass: 1.0 }],
        })
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self, DistError> {
        finite(&[lo, hi])?;
        if lo >= hi {
            return Err(DistError::InvalidSupport { lo, hi });
        }
        Ok(Self {
            segments: vec![Segment {
                lo,
                hi,
                coeffs: Poly::constant(1.0 / (hi - lo)),
            }],
            atoms: Vec::new(),
        })
    }

    pub fn triangular(lo: f64, mode: f64, hi: f64) -> Result<Self, DistError> {
        finite(&[lo, mode, hi])?;
        if lo >= hi {
            return Err(DistError::InvalidSupport { lo, hi });
        }
        if mode < lo || mode > hi {
            return Err(DistError::ModeOutside { lo, mode, hi });
        }
        let peak = 2.0 / (hi - lo);
        let mut segments = Vec::with_capacity(2);
        if mode > lo {
            segments.push(Segment {
                lo,
                hi: mode,
                coeffs: Poly::linear(0.0, peak / (mode - lo)),
            });
        }
        if hi > mode {
            segments.push(Segment {
                lo: mode,
                hi,
                coeffs: Poly::linear(peak, -peak / (hi - mode)),
            });
        }
        Ok(Self {
            segments,
            atoms: Vec::new(),
        })
    }

    /// Validates raw segments and atoms; mass within [`MASS_TOL`] of one is
    /// rescaled to exactly one.
    pub fn piecewise(segments: Vec<Segment>, atoms: Vec<Atom>) -> Result<Self, DistError> {
        for s in &segments {
            finite(&[s.lo, s.hi])?;
            finite(s.coeffs.coeffs())?;
            if s.lo >= s.hi {
                return Err(DistError::InvalidSupport { lo: s.lo, hi: s.hi });
            }
            if s.coeffs.coeffs().is_empty() {
                return Err(DistError::Empty);
            }
            if s.coeffs.degree() > DEGREE_CAP {
                return Err(DistError::DegreeCap {
                    degree: s.coeffs.degree(),
                });
            }
        }
        for a in &atoms {
            finite(&[a.at, a.mass])?;
            if a.mass < 0.0 {
                return Err(DistError::NegativeDensity {
                    at: a.at,
                    value: a.mass,
                });
            }
        }
        let mut segments = segments;
        segments.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        for w in segments.windows(2) {
            if w[1].lo < w[0].hi - merge_eps(w[0].hi) {
                return Err(DistError::Overlap { at: w[1].lo });
            }
        }
        let d = Self::from_raw(segments, atoms);
        d.check_nonnegative()?;
        let mass = d.mass();
        if !mass.is_finite() || (mass - 1.0).abs() > MASS_TOL {
            return Err(DistError::Mass { mass });
        }
        Ok(d.rescale(1.0 / mass))
    }

    pub fn make(spec: &DensitySpec) -> Result<Self, DistError> {
        match spec {
            DensitySpec::Point { at } => Self::point(*at),
            DensitySpec::Uniform { lo, hi } => Self::uniform(*lo, *hi),
            DensitySpec::Triangular { lo, mode, hi } => Self::triangular(*lo, *mode, *hi),
            DensitySpec::Piecewise { segments, atoms } => {
                Self::piecewise(segments.clone(), atoms.clone())
            }
        }
    }

    fn rescale(mut self, k: f64) -> Self {
        if k != 1.0 {
            for s in &mut self.segments {
                s.coeffs = s.coeffs.scale(k);
            }
            for a in &mut self.atoms {
                a.mass *= k;
            }
        }
        self
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Location of the single atom if this is a point mass.
    pub fn as_point(&self) -> Option<f64> {
        match (self.segments.is_empty(), self.atoms.as_slice()) {
            (true, [a]) => Some(a.at),
            _ => None,
        }
    }

    pub fn max_degree(&self) -> usize {
        self.segments
            .iter()
            .map(|s| s.coeffs.degree())
            .max()
            .unwrap_or(0)
    }

    pub fn mass(&self) -> f64 {
        self.segments.iter().map(Segment::mass).sum::<f64>()
            + self.atoms.iter().map(|a| a.mass).sum::<f64>()
    }

    pub fn support(&self) -> (f64, f64) {
        let lo = self
            .segments
            .iter()
            .map(|s| s.lo)
            .chain(self.atoms.iter().map(|a| a.at))
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .segments
            .iter()
            .map(|s| s.hi)
            .chain(self.atoms.iter().map(|a| a.at))
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    pub fn mean(&self) -> f64 {
        self.segments.iter().map(Segment::first_moment).sum::<f64>()
            + self.atoms.iter().map(|a| a.at * a.mass).sum::<f64>()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let seg: f64 = self
            .segments
            .iter()
            .map(|s| {
                // ∫ (lo + u − m)² p(u) du
                let c = s.lo - m;
                let sq = Poly(vec![c * c, 2.0 * c, 1.0]);
                s.coeffs.mul(&sq).integral(0.0, s.hi - s.lo)
            })
            .sum();
        let at: f64 = self.atoms.iter().map(|a| a.mass * (a.at - m).powi(2)).sum();
        (seg + at).max(0.0)
    }

    /// Continuous part of the density at `t`; atoms are not included.
    pub fn pdf(&self, t: f64) -> f64 {
        let mut hit = None;
        for s in &self.segments {
            if t >= s.lo && t < s.hi {
                return s.coeffs.eval(t - s.lo);
            }
            if t == s.hi {
                hit = Some(s.coeffs.eval(t - s.lo));
            }
        }
        hit.unwrap_or(0.0)
    }

    /// P(X ≤ t)
    pub fn cdf(&self, t: f64) -> f64 {
        let (lo, hi) = self.support();
        if t < lo {
            return 0.0;
        }
        if t >= hi {
            return 1.0;
        }
        let mut acc = 0.0;
        for s in &self.segments {
            if t >= s.hi {
                acc += s.mass();
            } else if t > s.lo {
                acc += s.coeffs.integral(0.0, t - s.lo);
            }
        }
        acc += self
            .atoms
            .iter()
            .filter(|a| a.at <= t)
            .map(|a| a.mass)
            .sum::<f64>();
        acc.clamp(0.0, 1.0)
    }

    /// Smallest t with P(X ≤ t) ≥ u, for u in [0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        enum Piece<'a> {
            Seg(&'a Segment),
            Atom(&'a Atom),
        }
        // Atoms sort ahead of a segment starting at the same point.
        let mut pieces: Vec<(f64, u8, Piece)> = self
            .segments
            .iter()
            .map(|s| (s.lo, 1, Piece::Seg(s)))
            .chain(self.atoms.iter().map(|a| (a.at, 0, Piece::Atom(a))))
            .collect();
        pieces.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut remaining = u;
        let mut last = self.support().1;
        for (_, _, piece) in &pieces {
            match piece {
                Piece::Atom(a) => {
                    if remaining < a.mass {
                        return a.at;
                    }
                    remaining -= a.mass;
                    last = a.at;
                }
                Piece::Seg(s) => {
                    let m = s.mass();
                    if remaining < m {
                        return s.lo + invert_segment(&s.coeffs, s.hi - s.lo, remaining);
                    }
                    remaining -= m;
                    last = s.hi;
                }
            }
        }
        last
    }

    /// E[max(c, X)]
    pub fn e_max_const(&self, c: f64) -> f64 {
        let mut acc = c * self.cdf(c);
        for s in &self.segments {
            if s.hi <= c {
                continue;
            }
            let from = (c - s.lo).max(0.0);
            let w = s.hi - s.lo;
            let t_poly = s.coeffs.mul(&Poly::linear(s.lo, 1.0));
            acc += t_poly.integral(from, w);
        }
        acc += self
            .atoms
            .iter()
            .filter(|a| a.at > c)
            .map(|a| a.at * a.mass)
            .sum::<f64>();
        acc
    }

    /// Distribution of `a·X + b`.
    pub fn affine(&self, a: f64, b: f64) -> Result<Self, DistError> {
        finite(&[a, b])?;
        if a == 0.0 {
            return Err(DistError::ZeroScale);
        }
        let mut segments: Vec<Segment> = self
            .segments
            .iter()
            .map(|s| {
                let w = s.hi - s.lo;
                if a > 0.0 {
                    Segment {
                        lo: a * s.lo + b,
                        hi: a * s.hi + b,
                        coeffs: s.coeffs.scale_arg(1.0 / a).scale(1.0 / a),
                    }
                } else {
                    Segment {
                        lo: a * s.hi + b,
                        hi: a * s.lo + b,
                        coeffs: s.coeffs.shift(w).scale_arg(1.0 / a).scale(-1.0 / a),
                    }
                }
            })
            .collect();
        if a < 0.0 {
            segments.reverse();
        }
        let atoms = merge_atoms(
            self.atoms
                .iter()
                .map(|x| Atom {
                    at: a * x.at + b,
                    mass: x.mass,
                })
                .collect(),
        );
        Ok(Self { segments, atoms })
    }

    /// Density of `X + Y` for independent `X` (self) and `Y`.
    pub fn convolve(&self, other: &Density1D) -> Result<Self, DistError> {
        if !self.segments.is_empty() && !other.segments.is_empty() {
            let degree = self.max_degree() + other.max_degree() + 1;
            if degree > DEGREE_CAP {
                return Err(DistError::DegreeCap { degree });
            }
        }
        let mut pieces = Vec::new();
        for s1 in &self.segments {
            for s2 in &other.segments {
                let base = s1.lo + s2.lo;
                for (w0, w1, coeffs) in
                    convolve_pieces(&s1.coeffs, s1.hi - s1.lo, &s2.coeffs, s2.hi - s2.lo)
                {
                    pieces.push(Segment {
                        lo: base + w0,
                        hi: base + w1,
                        coeffs,
                    });
                }
            }
        }
        let mut shifted = |atoms: &[Atom], segs: &[Segment]| {
            for a in atoms {
                for s in segs {
                    pieces.push(Segment {
                        lo: s.lo + a.at,
                        hi: s.hi + a.at,
                        coeffs: s.coeffs.scale(a.mass),
                    });
                }
            }
        };
        shifted(&self.atoms, &other.segments);
        shifted(&other.atoms, &self.segments);
        let atoms = self
            .atoms
            .iter()
            .flat_map(|a| {
                other.atoms.iter().map(move |b| Atom {
                    at: a.at + b.at,
                    mass: a.mass * b.mass,
                })
            })
            .collect();
        Ok(Self::from_raw(assemble(pieces), atoms))
    }

    /// Weighted pointwise combination of densities.
    pub fn mixture(components: &[(f64, Density1D)]) -> Result<Self, DistError> {
        if components.is_empty() {
            return Err(DistError::Empty);
        }
        let sum: f64 = components.iter().map(|c| c.0).sum();
        if components.iter().any(|c| c.0.is_nan() || c.0 < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(DistError::Weights { sum });
        }
        if let [(_, only)] = components {
            return Ok(only.clone());
        }
        let mut pieces = Vec::new();
        let mut atoms = Vec::new();
        for (w, d) in components.iter().filter(|c| c.0 > 0.0) {
            pieces.extend(d.segments.iter().map(|s| Segment {
                lo: s.lo,
                hi: s.hi,
                coeffs: s.coeffs.scale(*w),
            }));
            atoms.extend(d.atoms.iter().map(|a| Atom {
                at: a.at,
                mass: a.mass * w,
            }));
        }
        Ok(Self::from_raw(assemble(pieces), atoms))
    }

    fn check_nonnegative(&self) -> Result<(), DistError> {
        for s in &self.segments {
            let w = s.hi - s.lo;
            let n = if s.coeffs.degree() <= 1 { 1 } else { 64 };
            for k in 0..=n {
                let u = w * k as f64 / n as f64;
                let value = s.coeffs.eval(u);
                if value < NEG_TOL {
                    return Err(DistError::NegativeDensity {
                        at: s.lo + u,
                        value,
                    });
                }
            }
        }
        Ok(())
    }

    /// Checks every representation invariant: sorted non-overlapping
    /// segments, non-negative density, degree cap and unit mass.
    pub fn validate(&self) -> Result<(), DistError> {
        for s in &self.segments {
            if s.lo.partial_cmp(&s.hi) != Some(std::cmp::Ordering::Less) {
                return Err(DistError::InvalidSupport { lo: s.lo, hi: s.hi });
            }
            if s.coeffs.degree() > DEGREE_CAP {
                return Err(DistError::DegreeCap {
                    degree: s.coeffs.degree(),
                });
            }
        }
        for w in self.segments.windows(2) {
            if w[1].lo < w[0].hi - merge_eps(w[0].hi) {
                return Err(DistError::Overlap { at: w[1].lo });
            }
        }
        if self.atoms.iter().any(|a| a.mass < 0.0) {
            return Err(DistError::Empty);
        }
        self.check_nonnegative()?;
        let mass = self.mass();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(DistError::Mass { mass });
        }
        Ok(())
    }
}

/// Solves ∫_0^x p = target for x in [0, w].
fn invert_segment(p: &Poly, w: f64, target: f64) -> f64 {
    let c = p.coeffs();
    match c.len() {
        1 => return (target / c[0]).clamp(0.0, w),
        2 => {
            let (c0, c1) = (c[0], c[1]);
            let disc = (c0 * c0 + 2.0 * c1 * target).max(0.0).sqrt();
            let denom = c0 + disc;
            if denom > 0.0 {
                return (2.0 * target / denom).clamp(0.0, w);
            }
        }
        _ => {}
    }
    let anti = p.antiderivative();
    let (mut lo, mut hi) = (0.0, w);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if anti.eval(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Either a known constant or an independent random quantity.
#[derive(Debug, Clone, PartialEq)]
pub enum MuItem {
    Constant(f64),
    Dist(Density1D),
}

impl MuItem {
    pub fn mean(&self) -> f64 {
        match self {
            MuItem::Constant(c) => *c,
            MuItem::Dist(d) => d.mean(),
        }
    }
}

/// Outcome of an `E[max]` evaluation, with the route taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EMax {
    pub value: f64,
    /// False when some interval needed the quadrature fallback.
    pub closed_form: bool,
}

/// E[max_k X_k] for mutually independent items.
pub fn e_max_indep(items: &[MuItem]) -> f64 {
    e_max_indep_detailed(items).value
}

pub fn e_max_indep_detailed(items: &[MuItem]) -> EMax {
    let mut best_const: Option<f64> = None;
    let mut dists: Vec<&Density1D> = Vec::new();
    for item in items {
        let c = match item {
            MuItem::Constant(c) => Some(*c),
            MuItem::Dist(d) => d.as_point(),
        };
        match (c, item) {
            (Some(c), _) => best_const = Some(best_const.map_or(c, |b: f64| b.max(c))),
            (None, MuItem::Dist(d)) => dists.push(d),
            (None, MuItem::Constant(_)) => unreachable!(),
        }
    }
    let closed = |value| EMax {
        value,
        closed_form: true,
    };
    match (dists.as_slice(), best_const) {
        ([], Some(c)) => return closed(c),
        ([], None) => {
            return EMax {
                value: f64::NAN,
                closed_form: true,
            }
        }
        ([d], Some(c)) => return closed(d.e_max_const(c)),
        ([d], None) => return closed(d.mean()),
        _ => {}
    }
    let point;
    let mut all: Vec<&Density1D> = dists;
    if let Some(c) = best_const {
        point = Density1D::point(c).expect("finite constant");
        all.push(&point);
    }
    let lower = all
        .iter()
        .map(|d| d.support().0)
        .fold(f64::NEG_INFINITY, f64::max);
    let upper = all
        .iter()
        .map(|d| d.support().1)
        .fold(f64::NEG_INFINITY, f64::max);
    if upper <= lower {
        return closed(lower);
    }
    let mut grid: Vec<f64> = all
        .iter()
        .flat_map(|d| {
            d.segments
                .iter()
                .flat_map(|s| [s.lo, s.hi])
                .chain(d.atoms.iter().map(|a| a.at))
        })
        .filter(|&z| z > lower && z < upper)
        .chain([lower, upper])
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= merge_eps(*a));

    let mut total = lower;
    let mut closed_form = true;
    let tol = QUAD_TOL / grid.len() as f64;
    for win in grid.windows(2) {
        let (z0, z1) = (win[0], win[1]);
        let width = z1 - z0;
        // Each CDF restricted to (z0, z1) as a polynomial in s = t − z0.
        let cdfs: Vec<Poly> = all.iter().map(|d| local_cdf(d, z0, z1)).collect();
        let degree: usize = cdfs.iter().map(Poly::degree).sum();
        if degree <= DEGREE_CAP {
            let prod = cdfs
                .iter()
                .fold(Poly::constant(1.0), |acc, p| acc.mul(p));
            total += width - prod.integral(0.0, width);
        } else {
            closed_form = false;
            let f = |s: f64| 1.0 - cdfs.iter().map(|p| p.eval(s)).product::<f64>();
            total += quad::integrate(f, 0.0, width, tol);
        }
    }
    EMax {
        value: total,
        closed_form,
    }
}

/// CDF of `d` on the open interval (z0, z1), which must not contain any
/// breakpoint of `d`. Anchored at the midpoint: an atom within the grid
/// merge tolerance of `z0` may sit just right of it.
fn local_cdf(d: &Density1D, z0: f64, z1: f64) -> Poly {
    let mid = 0.5 * (z0 + z1);
    match d.segments.iter().find(|s| s.lo <= mid && mid < s.hi) {
        Some(s) => {
            let mut p = s.coeffs.shift(z0 - s.lo).antiderivative();
            p.0[0] = 0.0;
            p.0[0] = d.cdf(mid) - p.eval(mid - z0);
            p
        }
        None => Poly::constant(d.cdf(mid)),
    }
}
