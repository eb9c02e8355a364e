//! Exact interval and hyper-rectangle arithmetic.
//!
//! Every bound carries an explicit open/closed flag and comparisons are exact:
//! the analyses only intersect intervals and add user-supplied constants, so
//! no tolerance is ever applied. The empty interval is a distinct value rather
//! than an interval with crossed bounds.
//!
//! Intervals render as `(a,b]`, `[a,b)`, `(-inf,b]`, `(a,+inf)` and so on, and
//! parse back from the same grammar. The empty interval renders as `empty`.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// One end of an interval. Infinite values are always open.
#[derive(Clone, Copy, Debug)]
pub struct Bound {
    value: f64,
    closed: bool,
}

impl Bound {
    pub fn new(value: f64, closed: bool) -> Self {
        assert!(!value.is_nan(), "interval bounds must not be NaN");
        // `+ 0.0` folds -0.0 into 0.0 so equality and hashing agree.
        Bound {
            value: value + 0.0,
            closed: closed && value.is_finite(),
        }
    }

    pub fn closed(value: f64) -> Self {
        Bound::new(value, true)
    }

    pub fn open(value: f64) -> Self {
        Bound::new(value, false)
    }

    pub fn value(self) -> f64 {
        self.value
    }

    pub fn is_closed(self) -> bool {
        self.closed
    }

    /// Order as lower bounds: `[a` starts before `(a`.
    fn cmp_lower(self, other: Bound) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then_with(|| other.closed.cmp(&self.closed))
    }

    /// Order as upper bounds: `b)` ends before `b]`.
    fn cmp_upper(self, other: Bound) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then_with(|| self.closed.cmp(&other.closed))
    }
}

impl PartialEq for Bound {
    fn eq(&self, other: &Self) -> bool {
        self.value.to_bits() == other.value.to_bits() && self.closed == other.closed
    }
}

impl Eq for Bound {}

impl Hash for Bound {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.value.to_bits().hash(state);
        self.closed.hash(state);
    }
}

/// A real interval with independently open or closed ends, or the empty set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Interval(Option<(Bound, Bound)>);

impl Interval {
    pub const EMPTY: Interval = Interval(None);

    pub const FULL: Interval = Interval(Some((
        Bound {
            value: f64::NEG_INFINITY,
            closed: false,
        },
        Bound {
            value: f64::INFINITY,
            closed: false,
        },
    )));

    /// Builds the interval between `lo` and `hi`, collapsing to [`Interval::EMPTY`]
    /// when the bounds describe no real number.
    pub fn new(lo: Bound, hi: Bound) -> Self {
        match lo.value.partial_cmp(&hi.value) {
            Some(Ordering::Less) => Interval(Some((lo, hi))),
            Some(Ordering::Equal) if lo.closed && hi.closed => Interval(Some((lo, hi))),
            _ => Interval::EMPTY,
        }
    }

    /// `[a,b]`
    pub fn closed(a: f64, b: f64) -> Self {
        Interval::new(Bound::closed(a), Bound::closed(b))
    }

    /// `(a,b)`
    pub fn open(a: f64, b: f64) -> Self {
        Interval::new(Bound::open(a), Bound::open(b))
    }

    /// `(a,b]`
    pub fn open_closed(a: f64, b: f64) -> Self {
        Interval::new(Bound::open(a), Bound::closed(b))
    }

    /// `[a,b)`
    pub fn closed_open(a: f64, b: f64) -> Self {
        Interval::new(Bound::closed(a), Bound::open(b))
    }

    /// `[v,v]`
    pub fn point(v: f64) -> Self {
        Interval::closed(v, v)
    }

    /// `(-inf,v]`, the values routed to the left child of a split on `v`.
    pub fn at_most(v: f64) -> Self {
        Interval::open_closed(f64::NEG_INFINITY, v)
    }

    /// `(v,+inf)`, the values routed to the right child of a split on `v`.
    pub fn greater_than(v: f64) -> Self {
        Interval::open(v, f64::INFINITY)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_none()
    }

    pub fn lo(&self) -> Option<Bound> {
        self.0.map(|(lo, _)| lo)
    }

    pub fn hi(&self) -> Option<Bound> {
        self.0.map(|(_, hi)| hi)
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        match (self.0, other.0) {
            (Some((a_lo, a_hi)), Some((b_lo, b_hi))) => {
                let lo = if a_lo.cmp_lower(b_lo) == Ordering::Greater {
                    a_lo
                } else {
                    b_lo
                };
                let hi = if a_hi.cmp_upper(b_hi) == Ordering::Less {
                    a_hi
                } else {
                    b_hi
                };
                Interval::new(lo, hi)
            }
            _ => Interval::EMPTY,
        }
    }

    pub fn intersects(&self, other: &Interval) -> bool {
        !self.intersect(other).is_empty()
    }

    /// Endpoint-wise sum. A resulting bound is closed iff both summands are closed.
    pub fn sum(&self, other: &Interval) -> Result<Interval> {
        match (self.0, other.0) {
            (Some((a_lo, a_hi)), Some((b_lo, b_hi))) => Ok(Interval::new(
                Bound::new(a_lo.value + b_lo.value, a_lo.closed && b_lo.closed),
                Bound::new(a_hi.value + b_hi.value, a_hi.closed && b_hi.closed),
            )),
            _ => Err(Error::InvalidOperand("interval sum with an empty operand")),
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        match self.0 {
            None => false,
            Some((lo, hi)) => {
                let above = v > lo.value || (v == lo.value && lo.closed);
                let below = v < hi.value || (v == hi.value && hi.closed);
                above && below
            }
        }
    }

    /// True iff `v` lies strictly between the endpoint values.
    pub fn contains_interior(&self, v: f64) -> bool {
        match self.0 {
            None => false,
            Some((lo, hi)) => lo.value < v && v < hi.value,
        }
    }

    pub fn is_subset(&self, other: &Interval) -> bool {
        self.intersect(other) == *self
    }
}

impl Ord for Interval {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.0, other.0) {
            (None, None) => Ordering::Equal,
            (None, Some(_)) => Ordering::Less,
            (Some(_), None) => Ordering::Greater,
            (Some((a_lo, a_hi)), Some((b_lo, b_hi))) => a_lo
                .cmp_lower(b_lo)
                .then_with(|| a_hi.cmp_upper(b_hi)),
        }
    }
}

impl PartialOrd for Interval {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn fmt_value(v: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if v == f64::INFINITY {
        f.write_str("+inf")
    } else if v == f64::NEG_INFINITY {
        f.write_str("-inf")
    } else {
        // `Display` for f64 is the shortest representation that round-trips.
        write!(f, "{v}")
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            None => f.write_str("empty"),
            Some((lo, hi)) => {
                f.write_str(if lo.closed { "[" } else { "(" })?;
                fmt_value(lo.value, f)?;
                f.write_str(",")?;
                fmt_value(hi.value, f)?;
                f.write_str(if hi.closed { "]" } else { ")" })
            }
        }
    }
}

impl FromStr for Interval {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let err = |reason| Error::IntervalSyntax {
            input: s.to_string(),
            reason,
        };
        let t = s.trim();
        if t == "empty" {
            return Ok(Interval::EMPTY);
        }
        let lo_closed = match t.chars().next() {
            Some('[') => true,
            Some('(') => false,
            _ => return Err(err("expected `(` or `[`")),
        };
        let hi_closed = match t.chars().last() {
            Some(']') => true,
            Some(')') => false,
            _ => return Err(err("expected `)` or `]`")),
        };
        if t.len() < 2 {
            return Err(err("truncated interval"));
        }
        let body = &t[1..t.len() - 1];
        let (a, b) = body.split_once(',').ok_or_else(|| err("expected `,`"))?;
        let parse = |tok: &str| -> Result<f64> {
            match tok.trim() {
                "-inf" => Ok(f64::NEG_INFINITY),
                "+inf" | "inf" => Ok(f64::INFINITY),
                other => match other.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(err("bad endpoint")),
                },
            }
        };
        let (a, b) = (parse(a)?, parse(b)?);
        if (lo_closed && a.is_infinite()) || (hi_closed && b.is_infinite()) {
            return Err(err("infinite endpoints must be open"));
        }
        let interval = Interval::new(Bound::new(a, lo_closed), Bound::new(b, hi_closed));
        if interval.is_empty() {
            return Err(err("bounds describe an empty set; write `empty`"));
        }
        Ok(interval)
    }
}

impl Serialize for Interval {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An axis-aligned box `⟨I_1, …, I_d⟩`. Empty iff any component is empty, in
/// which case every component is stored as empty so that all empty boxes of
/// one dimension compare equal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HyperRectangle(Vec<Interval>);

impl HyperRectangle {
    pub fn new(dims: Vec<Interval>) -> Self {
        let mut dims = dims;
        if dims.iter().any(Interval::is_empty) {
            dims.iter_mut().for_each(|i| *i = Interval::EMPTY);
        }
        HyperRectangle(dims)
    }

    /// The whole space `(-inf,+inf)^d`.
    pub fn full(d: usize) -> Self {
        HyperRectangle(vec![Interval::FULL; d])
    }

    /// `⟨[0,0], …, [0,0]⟩`, the additive identity.
    pub fn zero(d: usize) -> Self {
        HyperRectangle(vec![Interval::point(0.0); d])
    }

    /// The closed box `[x_f - eps, x_f + eps]` on every feature.
    pub fn ball(center: &[f64], eps: f64) -> Self {
        HyperRectangle::new(
            center
                .iter()
                .map(|&c| Interval::closed(c - eps, c + eps))
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.first().is_some_and(Interval::is_empty)
    }

    pub fn get(&self, f: usize) -> &Interval {
        &self.0[f]
    }

    pub fn components(&self) -> &[Interval] {
        &self.0
    }

    /// Copy of `self` with the `f`-th component replaced.
    pub fn with_component(&self, f: usize, interval: Interval) -> Self {
        if interval.is_empty() {
            return HyperRectangle(vec![Interval::EMPTY; self.dim()]);
        }
        let mut dims = self.0.clone();
        dims[f] = interval;
        HyperRectangle(dims)
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if self.dim() == d {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: d,
            })
        }
    }

    pub fn intersect(&self, other: &HyperRectangle) -> Result<HyperRectangle> {
        other.check_dim(self.dim())?;
        Ok(HyperRectangle::new(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a.intersect(b))
                .collect(),
        ))
    }

    pub fn intersects(&self, other: &HyperRectangle) -> Result<bool> {
        other.check_dim(self.dim())?;
        Ok(self.0.iter().zip(&other.0).all(|(a, b)| a.intersects(b)))
    }

    pub fn sum(&self, other: &HyperRectangle) -> Result<HyperRectangle> {
        other.check_dim(self.dim())?;
        let dims = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.sum(b))
            .collect::<Result<Vec<_>>>()?;
        Ok(HyperRectangle::new(dims))
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        self.check_dim(x.len())?;
        Ok(self.0.iter().zip(x).all(|(i, &v)| i.contains(v)))
    }

    pub fn is_subset(&self, other: &HyperRectangle) -> Result<bool> {
        Ok(self.intersect(other)? == *self)
    }
}

impl fmt::Display for HyperRectangle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("⟨")?;
        for (i, iv) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{iv}")?;
        }
        f.write_str("⟩")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const NEG: f64 = f64::NEG_INFINITY;
    const POS: f64 = f64::INFINITY;

    fn iv(s: &str) -> Interval {
        s.parse().unwrap()
    }

    #[test]
    fn intersect_examples() {
        assert_eq!(iv("(10,11]").intersect(&iv("(-inf,10]")), Interval::EMPTY);
        assert_eq!(iv("(5,8]").intersect(&iv("(7,9]")), iv("(7,8]"));
        assert_eq!(iv("[2,3]").intersect(&Interval::FULL), iv("[2,3]"));
        assert_eq!(iv("[1,2]").intersect(&iv("[2,3]")), Interval::point(2.0));
        assert_eq!(iv("[1,2)").intersect(&iv("[2,3]")), Interval::EMPTY);
    }

    #[test]
    fn intersect_matches_membership_on_a_rational_grid() {
        let (a, b) = (iv("(5,8]"), iv("(7,9]"));
        let c = a.intersect(&b);
        for k in 0..=48 {
            let v = 4.0 + k as f64 * 0.125;
            assert_eq!(c.contains(v), a.contains(v) && b.contains(v), "v = {v}");
        }
    }

    #[test]
    fn sum_examples() {
        assert_eq!(iv("[1,3]").sum(&iv("(4,6]")).unwrap(), iv("(5,9]"));
        assert_eq!(Interval::point(0.0).sum(&iv("[2,5]")).unwrap(), iv("[2,5]"));
        assert_eq!(iv("(-inf,10]").sum(&iv("[-1,1]")).unwrap(), iv("(-inf,11]"));
        assert_eq!(Interval::FULL.sum(&iv("[-1,1]")).unwrap(), Interval::FULL);
        assert!(Interval::EMPTY.sum(&iv("[0,1]")).is_err());
    }

    #[test]
    fn contains_examples() {
        assert!(!iv("(7,8]").contains(7.0));
        assert!(iv("(7,8]").contains(8.0));
        assert!(!Interval::EMPTY.contains(0.0));
        assert!(Interval::FULL.contains(1e300));
    }

    #[test]
    fn infinite_bounds_are_open() {
        let i = Interval::closed(NEG, 3.0);
        assert!(!i.lo().unwrap().is_closed());
        assert_eq!(i.to_string(), "(-inf,3]");
        assert!("[-inf,3]".parse::<Interval>().is_err());
        assert_eq!(Interval::open(POS, POS), Interval::EMPTY);
    }

    #[test]
    fn degenerate_intervals() {
        assert_eq!(Interval::point(4.0).to_string(), "[4,4]");
        assert_eq!(Interval::open_closed(4.0, 4.0), Interval::EMPTY);
        assert_eq!(Interval::closed(5.0, 4.0), Interval::EMPTY);
        assert_eq!(Interval::closed(-0.0, 0.0), Interval::point(0.0));
    }

    #[test]
    fn parse_errors() {
        for bad in ["", "(", "1,2]", "(1;2]", "(a,2]", "(3,1)", "(1,1]", "[NaN,1]"] {
            assert!(bad.parse::<Interval>().is_err(), "{bad:?}");
        }
        assert_eq!(" ( -inf , 2.5 ] ".parse::<Interval>().unwrap(), iv("(-inf,2.5]"));
        assert_eq!("empty".parse::<Interval>().unwrap(), Interval::EMPTY);
    }

    #[test]
    fn box_examples() {
        let h = HyperRectangle::new(vec![iv("(-inf,10]"), iv("(4,5]")]);
        let g = HyperRectangle::new(vec![iv("(9,10]"), Interval::FULL]);
        assert_eq!(
            h.intersect(&g).unwrap(),
            HyperRectangle::new(vec![iv("(9,10]"), iv("(4,5]")])
        );
        assert_eq!(h.sum(&HyperRectangle::zero(2)).unwrap(), h);
        assert!(h.contains(&[0.0, 4.5]).unwrap());
        assert!(!h.contains(&[0.0, 4.0]).unwrap());
        assert!(h.contains(&[0.0]).is_err());
        assert!(h.intersect(&HyperRectangle::full(3)).is_err());
        assert!(h.sum(&HyperRectangle::full(1)).is_err());
    }

    #[test]
    fn empty_boxes_are_canonical() {
        let a = HyperRectangle::new(vec![iv("(10,11]"), iv("[0,1]")]);
        let b = HyperRectangle::new(vec![iv("(-inf,10]"), iv("[5,6]")]);
        let c = a.intersect(&b).unwrap();
        assert!(c.is_empty());
        assert_eq!(c, HyperRectangle::new(vec![Interval::EMPTY, Interval::EMPTY]));
        assert!(!a.intersects(&b).unwrap());
    }

    #[test]
    fn display_round_trips_awkward_floats() {
        for v in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, f64::MIN_POSITIVE] {
            let i = Interval::open_closed(v, v.abs() + 1.0);
            let back: Interval = i.to_string().parse().unwrap();
            assert_eq!(back, i);
        }
    }

    // Endpoints drawn from a small grid so that coincidences are frequent.
    fn endpoint() -> impl Strategy<Value = f64> {
        prop_oneof![
            8 => (-8i32..=8).prop_map(|k| k as f64 * 0.5),
            1 => Just(NEG),
            1 => Just(POS),
        ]
    }

    fn interval() -> impl Strategy<Value = Interval> {
        (endpoint(), any::<bool>(), endpoint(), any::<bool>())
            .prop_map(|(a, ac, b, bc)| Interval::new(Bound::new(a, ac), Bound::new(b, bc)))
    }

    fn nonempty() -> impl Strategy<Value = Interval> {
        interval().prop_filter("non-empty", |i| !i.is_empty())
    }

    fn probe() -> impl Strategy<Value = f64> {
        (-20i32..=20).prop_map(|k| k as f64 * 0.25)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn intersection_laws(a in interval(), b in interval(), c in interval()) {
            prop_assert_eq!(a.intersect(&b), b.intersect(&a));
            prop_assert_eq!(a.intersect(&b).intersect(&c), a.intersect(&b.intersect(&c)));
            prop_assert_eq!(a.intersect(&a), a);
        }

        #[test]
        fn intersection_is_pointwise_and(a in interval(), b in interval(), v in probe()) {
            prop_assert_eq!(a.intersect(&b).contains(v), a.contains(v) && b.contains(v));
        }

        #[test]
        fn sum_contains_pairwise_sums(a in nonempty(), b in nonempty(), s in 0u32..=8, t in 0u32..=8) {
            // Dyadic sample points keep every sum exact; unbounded sides are clipped.
            let sample = |i: &Interval, k: u32| {
                let lo = i.lo().unwrap().value().max(-16.0);
                let hi = i.hi().unwrap().value().min(16.0);
                lo + (hi - lo) * k as f64 / 8.0
            };
            let (v, w) = (sample(&a, s), sample(&b, t));
            if a.contains(v) && b.contains(w) {
                prop_assert!(a.sum(&b).unwrap().contains(v + w));
            }
        }

        #[test]
        fn text_round_trip(a in interval()) {
            let text = a.to_string();
            let back: Interval = text.parse().unwrap();
            prop_assert_eq!(back, a);
            let json = serde_json::to_string(&a).unwrap();
            prop_assert_eq!(serde_json::from_str::<Interval>(&json).unwrap(), a);
        }
    }
}
