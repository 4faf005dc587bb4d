use std::fmt;

/// LTL formula in negation normal form over propositions indexed into an
/// AP list. Bounded operators carry their horizon `k`.
///
/// Build values through the lower-case constructors, which keep `And`/`Or`
/// flattened, sorted, deduplicated and constant-folded so that equal
/// residuals compare equal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Formula {
    True,
    False,
    Atom(usize),
    NotAtom(usize),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Next(Box<Formula>),
    Always(Box<Formula>),
    Eventually(Box<Formula>),
    /// `a U≤k b`.
    BoundedUntil(u32, Box<Formula>, Box<Formula>),
    /// `a R≤k b`: `b` holds up to and including the first `a`, or for `k+1`
    /// steps.
    BoundedRelease(u32, Box<Formula>, Box<Formula>),
    BoundedAlways(u32, Box<Formula>),
    BoundedEventually(u32, Box<Formula>),
}

use Formula::*;

impl Formula {
    pub fn and(parts: Vec<Formula>) -> Formula {
        junction(parts, true)
    }

    pub fn or(parts: Vec<Formula>) -> Formula {
        junction(parts, false)
    }

    pub fn next(f: Formula) -> Formula {
        Next(Box::new(f))
    }

    pub fn always(f: Formula) -> Formula {
        match f {
            True => True,
            f => Always(Box::new(f)),
        }
    }

    pub fn eventually(f: Formula) -> Formula {
        match f {
            True => True,
            False => False,
            f => Eventually(Box::new(f)),
        }
    }

    pub fn until(k: u32, a: Formula, b: Formula) -> Formula {
        BoundedUntil(k, Box::new(a), Box::new(b))
    }

    pub fn release(k: u32, a: Formula, b: Formula) -> Formula {
        BoundedRelease(k, Box::new(a), Box::new(b))
    }

    pub fn bounded_always(k: u32, f: Formula) -> Formula {
        BoundedAlways(k, Box::new(f))
    }

    pub fn bounded_eventually(k: u32, f: Formula) -> Formula {
        BoundedEventually(k, Box::new(f))
    }

    /// Largest proposition index used, if any.
    pub fn max_atom(&self) -> Option<usize> {
        match self {
            True | False => None,
            Atom(p) | NotAtom(p) => Some(*p),
            And(v) | Or(v) => v.iter().filter_map(Formula::max_atom).max(),
            Next(f) | Always(f) | Eventually(f) | BoundedAlways(_, f) | BoundedEventually(_, f) => {
                f.max_atom()
            }
            BoundedUntil(_, a, b) | BoundedRelease(_, a, b) => a.max_atom().max(b.max_atom()),
        }
    }

    /// Nesting depth of temporal operators, counting a bounded operator with
    /// horizon `k` as `k` nested steps.
    pub fn temporal_depth(&self) -> usize {
        match self {
            True | False | Atom(_) | NotAtom(_) => 0,
            And(v) | Or(v) => v.iter().map(Formula::temporal_depth).max().unwrap_or(0),
            Next(f) | Always(f) | Eventually(f) => 1 + f.temporal_depth(),
            BoundedAlways(k, f) | BoundedEventually(k, f) => *k as usize + f.temporal_depth(),
            BoundedUntil(k, a, b) | BoundedRelease(k, a, b) => {
                *k as usize + a.temporal_depth().max(b.temporal_depth())
            }
        }
    }

    /// Renders with proposition names from `ap`.
    pub fn display<'a>(&'a self, ap: &'a [String]) -> impl fmt::Display + 'a {
        Named { f: self, ap }
    }
}

fn junction(parts: Vec<Formula>, conj: bool) -> Formula {
    let (unit, zero) = if conj { (True, False) } else { (False, True) };
    let mut flat = Vec::with_capacity(parts.len());
    for p in parts {
        match p {
            And(v) if conj => flat.extend(v),
            Or(v) if !conj => flat.extend(v),
            p if p == unit => {}
            p if p == zero => return zero,
            p => flat.push(p),
        }
    }
    flat.sort();
    flat.dedup();
    // p together with ¬p.
    for f in &flat {
        if let Atom(p) = f {
            if flat.binary_search(&NotAtom(*p)).is_ok() {
                return zero;
            }
        }
    }
    match flat.len() {
        0 => unit,
        1 => flat.pop().unwrap(),
        _ if conj => And(flat),
        _ => Or(flat),
    }
}

/// Negation pushed to the atoms through the dual of every operator.
pub fn negate(f: &Formula) -> Formula {
    match f {
        True => False,
        False => True,
        Atom(p) => NotAtom(*p),
        NotAtom(p) => Atom(*p),
        And(v) => Formula::or(v.iter().map(negate).collect()),
        Or(v) => Formula::and(v.iter().map(negate).collect()),
        Next(g) => Formula::next(negate(g)),
        Always(g) => Formula::eventually(negate(g)),
        Eventually(g) => Formula::always(negate(g)),
        BoundedUntil(k, a, b) => Formula::release(*k, negate(a), negate(b)),
        BoundedRelease(k, a, b) => Formula::until(*k, negate(a), negate(b)),
        BoundedAlways(k, g) => Formula::bounded_eventually(*k, negate(g)),
        BoundedEventually(k, g) => Formula::bounded_always(*k, negate(g)),
    }
}

/// One unrolling step of a bounded operator; other formulas are returned as
/// they are.
fn unroll(f: &Formula) -> Formula {
    match f {
        BoundedUntil(0, _, b) | BoundedRelease(0, _, b) => (**b).clone(),
        BoundedAlways(0, g) | BoundedEventually(0, g) => (**g).clone(),
        BoundedUntil(k, a, b) => Formula::or(vec![
            (**b).clone(),
            Formula::and(vec![(**a).clone(), Formula::next(Formula::until(k - 1, (**a).clone(), (**b).clone()))]),
        ]),
        BoundedRelease(k, a, b) => Formula::and(vec![
            (**b).clone(),
            Formula::or(vec![(**a).clone(), Formula::next(Formula::release(k - 1, (**a).clone(), (**b).clone()))]),
        ]),
        BoundedAlways(k, g) => Formula::and(vec![
            (**g).clone(),
            Formula::next(Formula::bounded_always(k - 1, (**g).clone())),
        ]),
        BoundedEventually(k, g) => Formula::or(vec![
            (**g).clone(),
            Formula::next(Formula::bounded_eventually(k - 1, (**g).clone())),
        ]),
        f => f.clone(),
    }
}

/// Rewrites every bounded operator into nested `○`, `∧` and `∨`.
pub fn expand(f: &Formula) -> Formula {
    match f {
        True | False | Atom(_) | NotAtom(_) => f.clone(),
        And(v) => Formula::and(v.iter().map(expand).collect()),
        Or(v) => Formula::or(v.iter().map(expand).collect()),
        Next(g) => Formula::next(expand(g)),
        Always(g) => Formula::always(expand(g)),
        Eventually(g) => Formula::eventually(expand(g)),
        BoundedUntil(..) | BoundedRelease(..) | BoundedAlways(..) | BoundedEventually(..) => {
            expand(&unroll(f))
        }
    }
}

/// Residual obligation after reading one letter (a bitmask over the AP
/// list), under finite-prefix semantics for co-safe formulas.
pub fn progress(f: &Formula, letter: u32) -> Formula {
    match f {
        True => True,
        False => False,
        Atom(p) => {
            if letter >> p & 1 == 1 {
                True
            } else {
                False
            }
        }
        NotAtom(p) => {
            if letter >> p & 1 == 1 {
                False
            } else {
                True
            }
        }
        And(v) => Formula::and(v.iter().map(|g| progress(g, letter)).collect()),
        Or(v) => Formula::or(v.iter().map(|g| progress(g, letter)).collect()),
        Next(g) => (**g).clone(),
        Always(g) => Formula::and(vec![progress(g, letter), f.clone()]),
        Eventually(g) => Formula::or(vec![progress(g, letter), f.clone()]),
        BoundedUntil(..) | BoundedRelease(..) | BoundedAlways(..) | BoundedEventually(..) => {
            progress(&unroll(f), letter)
        }
    }
}

struct Named<'a> {
    f: &'a Formula,
    ap: &'a [String],
}

impl Named<'_> {
    fn name(&self, p: usize) -> String {
        self.ap.get(p).cloned().unwrap_or_else(|| format!("p{p}"))
    }

    fn write(&self, f: &Formula, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sub = |g: &'_ Formula, out: &mut fmt::Formatter<'_>| -> fmt::Result {
            match g {
                True | False | Atom(_) | NotAtom(_) => self.write(g, out),
                _ => {
                    write!(out, "(")?;
                    self.write(g, out)?;
                    write!(out, ")")
                }
            }
        };
        match f {
            True => write!(out, "true"),
            False => write!(out, "false"),
            Atom(p) => write!(out, "{}", self.name(*p)),
            NotAtom(p) => write!(out, "!{}", self.name(*p)),
            And(v) | Or(v) => {
                let op = if matches!(f, And(_)) { " & " } else { " | " };
                for (i, g) in v.iter().enumerate() {
                    if i > 0 {
                        write!(out, "{op}")?;
                    }
                    sub(g, out)?;
                }
                Ok(())
            }
            Next(g) => {
                write!(out, "X ")?;
                sub(g, out)
            }
            Always(g) => {
                write!(out, "G ")?;
                sub(g, out)
            }
            Eventually(g) => {
                write!(out, "F ")?;
                sub(g, out)
            }
            BoundedAlways(k, g) => {
                write!(out, "G<={k} ")?;
                sub(g, out)
            }
            BoundedEventually(k, g) => {
                write!(out, "F<={k} ")?;
                sub(g, out)
            }
            BoundedUntil(k, a, b) | BoundedRelease(k, a, b) => {
                let op = if matches!(f, BoundedUntil(..)) { "U" } else { "R" };
                sub(a, out)?;
                write!(out, " {op}<={k} ")?;
                sub(b, out)
            }
        }
    }
}

impl fmt::Display for Named<'_> {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(self.f, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn junctions_normalize() {
        let a = Atom(0);
        let b = Atom(1);
        assert_eq!(
            Formula::and(vec![b.clone(), True, Formula::and(vec![a.clone(), b.clone()])]),
            And(vec![a.clone(), b.clone()])
        );
        assert_eq!(Formula::or(vec![a.clone(), NotAtom(0)]), True);
        assert_eq!(Formula::and(vec![a.clone(), False]), False);
        assert_eq!(Formula::or(vec![]), False);
    }

    #[test]
    fn negation_duals() {
        assert_eq!(negate(&Formula::always(NotAtom(0))), Formula::eventually(Atom(0)));
        let phi = Formula::and(vec![Formula::next(NotAtom(0)), Formula::next(Formula::next(NotAtom(0)))]);
        assert_eq!(
            negate(&phi),
            Formula::or(vec![Formula::next(Atom(0)), Formula::next(Formula::next(Atom(0)))])
        );
    }

    #[test]
    fn expansion_base_cases() {
        let psi = Atom(0);
        assert_eq!(
            expand(&Formula::bounded_always(1, psi.clone())),
            Formula::and(vec![psi.clone(), Formula::next(psi.clone())])
        );
        assert_eq!(expand(&Formula::until(0, Atom(1), Atom(2))), Atom(2));
    }

    #[test]
    fn constants_are_fixed_points() {
        for l in 0..4 {
            assert_eq!(progress(&True, l), True);
            assert_eq!(progress(&False, l), False);
        }
    }
}
