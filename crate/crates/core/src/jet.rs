//! Truncated multivariate Taylor jets over the slit tangent bundle.
//!
//! Every scalar quantity of the engine is expanded around one site
//! (x, y) in the 2n variables x^1..x^n, y^1..y^n and stored as Taylor
//! coefficients up to a truncation region. Tensor formulas then become
//! jet arithmetic plus coefficient shifts; the partial derivatives a
//! formula needs are read off at the end as `coefficient * m!`.
//!
//! Two truncation regions exist:
//!
//! * grouped   -- total x-degree <= x_cap and total y-degree <= y_cap.
//!   This is the working region of the tensor pipeline (base and fiber
//!   derivatives have very different depth requirements).
//! * box       -- per-variable degree caps. Used by the directional
//!   materialization strategy, which evaluates a quantity once per
//!   direction-combination box and assembles the grouped table from the
//!   harvested coefficients.
//!
//! Soundness rule: each jet tracks how far its coefficients are valid
//! (`Validity`). Arithmetic propagates the componentwise minimum,
//! coefficient shifts lose one order in the shifted group, and reading a
//! partial beyond the valid region is an `OrderExceeded` error rather
//! than silent garbage. Storage beyond the valid region is unspecified
//! and never read.
//!
//! Determinism: all coefficient loops run in the table's graded order,
//! so results are bit-identical run to run, and enlarging the truncation
//! region never changes the coefficients shared with the smaller region.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::sample::TangentSample;

/// Truncation region of a jet table, always downward closed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Region {
    /// Total x-degree <= x_cap, total y-degree <= y_cap, for `n` base dims.
    Grouped { n: usize, x_cap: u8, y_cap: u8 },
    /// Per-variable caps over all 2n slots.
    Box { caps: Vec<u8> },
}

impl Region {
    pub fn nvars(&self) -> usize {
        match self {
            Region::Grouped { n, .. } => 2 * n,
            Region::Box { caps } => caps.len(),
        }
    }

    pub fn base_dim(&self) -> usize {
        self.nvars() / 2
    }

    fn contains(&self, exps: &[u8]) -> bool {
        match self {
            Region::Grouped { n, x_cap, y_cap } => {
                let sx: u16 = exps[..*n].iter().map(|e| *e as u16).sum();
                let sy: u16 = exps[*n..].iter().map(|e| *e as u16).sum();
                sx <= *x_cap as u16 && sy <= *y_cap as u16
            }
            Region::Box { caps } => exps.iter().zip(caps).all(|(e, c)| e <= c),
        }
    }
}

/// How far a jet's coefficients are trustworthy. Same shape as the region
/// of its table; arithmetic takes minima, derivatives subtract one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validity {
    Grouped(u8, u8),
    Box(Vec<u8>),
}

impl Validity {
    fn meet(&self, other: &Validity) -> Validity {
        match (self, other) {
            (Validity::Grouped(ax, ay), Validity::Grouped(bx, by)) => {
                Validity::Grouped(*ax.min(bx), *ay.min(by))
            }
            (Validity::Box(a), Validity::Box(b)) => {
                Validity::Box(a.iter().zip(b).map(|(p, q)| *p.min(q)).collect())
            }
            _ => unreachable!("jets from one table always share a validity shape"),
        }
    }

    /// Largest total degree a monomial inside this validity can have.
    fn total_budget(&self) -> usize {
        match self {
            Validity::Grouped(vx, vy) => *vx as usize + *vy as usize,
            Validity::Box(caps) => caps.iter().map(|c| *c as usize).sum(),
        }
    }
}

/// Shared per-region lookup structure: monomials in graded-lex order,
/// multiplication pairs grouped by output monomial, shift maps, factorials.
pub struct JetTable {
    pub region: Region,
    nvars: usize,
    n: usize,
    count: usize,
    /// Exponent vectors, `count * nvars`, graded-lex order; index 0 = const.
    exps: Vec<u8>,
    deg_x: Vec<u8>,
    deg_y: Vec<u8>,
    index: HashMap<Vec<u8>, u32>,
    /// m! per monomial (product of slot factorials).
    fact: Vec<f64>,
    pair_off: Vec<u32>,
    pair_i: Vec<u32>,
    pair_j: Vec<u32>,
    /// up[slot * count + m] = index of m + e_slot, or u32::MAX.
    up: Vec<u32>,
}

impl JetTable {
    fn build(region: Region) -> Arc<JetTable> {
        let nvars = region.nvars();
        let n = region.base_dim();
        // Enumerate the region, then sort graded-lex.
        let mut monos: Vec<Vec<u8>> = Vec::new();
        let caps: Vec<u8> = match &region {
            Region::Grouped { n, x_cap, y_cap } => {
                let mut c = vec![*x_cap; *n];
                c.extend(std::iter::repeat(*y_cap).take(*n));
                c
            }
            Region::Box { caps } => caps.clone(),
        };
        let mut cur = vec![0u8; nvars];
        loop {
            if region.contains(&cur) {
                monos.push(cur.clone());
            }
            // Odometer over the per-variable caps.
            let mut k = 0;
            loop {
                if k == nvars {
                    break;
                }
                if cur[k] < caps[k] {
                    cur[k] += 1;
                    break;
                }
                cur[k] = 0;
                k += 1;
            }
            if k == nvars {
                break;
            }
        }
        monos.sort_by(|a, b| {
            let ta: u16 = a.iter().map(|e| *e as u16).sum();
            let tb: u16 = b.iter().map(|e| *e as u16).sum();
            ta.cmp(&tb).then_with(|| a.cmp(b))
        });
        let count = monos.len();
        let mut exps = Vec::with_capacity(count * nvars);
        let mut deg_x = Vec::with_capacity(count);
        let mut deg_y = Vec::with_capacity(count);
        let mut fact = Vec::with_capacity(count);
        let mut index = HashMap::with_capacity(count);
        for (i, m) in monos.iter().enumerate() {
            exps.extend_from_slice(m);
            deg_x.push(m[..n].iter().sum());
            deg_y.push(m[n..].iter().sum());
            let f: f64 = m
                .iter()
                .map(|e| (1..=*e as u64).product::<u64>() as f64)
                .product();
            fact.push(f);
            index.insert(m.clone(), i as u32);
        }
        // Multiplication pairs per output monomial. Graded order means any
        // divisor of monos[o] appears before o, so a prefix scan suffices.
        let mut pair_off = Vec::with_capacity(count + 1);
        let mut pair_i = Vec::new();
        let mut pair_j = Vec::new();
        pair_off.push(0u32);
        for o in 0..count {
            let mo = &monos[o];
            for (i, mi) in monos.iter().enumerate().take(o + 1) {
                if mi.iter().zip(mo).all(|(a, b)| a <= b) {
                    let rest: Vec<u8> = mo.iter().zip(mi).map(|(b, a)| b - a).collect();
                    let j = index[&rest];
                    pair_i.push(i as u32);
                    pair_j.push(j);
                }
            }
            pair_off.push(pair_i.len() as u32);
        }
        // Shift maps.
        let mut up = vec![u32::MAX; nvars * count];
        for m in 0..count {
            for v in 0..nvars {
                let mut e = monos[m].clone();
                e[v] += 1;
                if let Some(ix) = index.get(&e) {
                    up[v * count + m] = *ix;
                }
            }
        }
        Arc::new(JetTable {
            region,
            nvars,
            n,
            count,
            exps,
            deg_x,
            deg_y,
            index,
            fact,
            pair_off,
            pair_i,
            pair_j,
            up,
        })
    }

    /// Shared cache: identical regions give the same `Arc`, so table
    /// pointer equality doubles as a compatibility check for jets.
    pub fn get(region: Region) -> Arc<JetTable> {
        static CACHE: OnceLock<Mutex<HashMap<Region, Arc<JetTable>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = cache.lock().unwrap();
        map.entry(region.clone())
            .or_insert_with(|| JetTable::build(region))
            .clone()
    }

    pub fn grouped(n: usize, x_cap: u8, y_cap: u8) -> Arc<JetTable> {
        JetTable::get(Region::Grouped { n, x_cap, y_cap })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn base_dim(&self) -> usize {
        self.n
    }

    fn exps_of(&self, m: usize) -> &[u8] {
        &self.exps[m * self.nvars..(m + 1) * self.nvars]
    }

    fn full_validity(&self) -> Validity {
        match &self.region {
            Region::Grouped { x_cap, y_cap, .. } => Validity::Grouped(*x_cap, *y_cap),
            Region::Box { caps } => Validity::Box(caps.clone()),
        }
    }

    fn in_validity(&self, m: usize, v: &Validity) -> bool {
        match v {
            Validity::Grouped(vx, vy) => self.deg_x[m] <= *vx && self.deg_y[m] <= *vy,
            Validity::Box(caps) => self.exps_of(m).iter().zip(caps).all(|(e, c)| e <= c),
        }
    }
}

impl fmt::Debug for JetTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "JetTable({:?}, {} monomials)", self.region, self.count)
    }
}

/// Site plus table: the algebra every jet of one computation lives in.
#[derive(Clone)]
pub struct JetScope {
    pub table: Arc<JetTable>,
    pub center: Arc<TangentSample>,
}

impl JetScope {
    pub fn new(table: Arc<JetTable>, center: Arc<TangentSample>) -> Result<Self> {
        if table.base_dim() != center.dim() {
            return Err(Error::DimensionMismatch(format!(
                "table over {} base dims, site has {}",
                table.base_dim(),
                center.dim()
            )));
        }
        Ok(Self { table, center })
    }

    pub fn dim(&self) -> usize {
        self.table.base_dim()
    }

    /// Slot of x^i (0-based i).
    pub fn xslot(&self, i: usize) -> usize {
        i
    }

    /// Slot of y^i (0-based i).
    pub fn yslot(&self, i: usize) -> usize {
        self.table.base_dim() + i
    }

    /// Constant jet; exact, so valid on the whole region.
    pub fn constant(&self, c: f64) -> Jet {
        let mut coeff = vec![0.0; self.table.count()];
        coeff[0] = c;
        Jet {
            table: self.table.clone(),
            center: self.center.clone(),
            coeff,
            validity: self.table.full_validity(),
        }
    }

    /// Coordinate jet for one of the 2n slots: value + unit seed. Exact.
    pub fn coordinate(&self, slot: usize) -> Result<Jet> {
        let nvars = 2 * self.dim();
        if slot >= nvars {
            return Err(Error::InvalidSlot {
                slot,
                dim: self.dim(),
            });
        }
        let value = if slot < self.dim() {
            self.center.x[slot]
        } else {
            self.center.y[slot - self.dim()]
        };
        let mut coeff = vec![0.0; self.table.count()];
        coeff[0] = value;
        let mut e = vec![0u8; nvars];
        e[slot] = 1;
        // If the region cannot hold the unit seed (cap 0 in that group),
        // the constant part alone is still the exact truncation of the
        // coordinate function; asking for its derivative later fails
        // loudly through the validity check.
        if let Some(ix) = self.table.index.get(&e) {
            coeff[*ix as usize] = 1.0;
        }
        Ok(Jet {
            table: self.table.clone(),
            center: self.center.clone(),
            coeff,
            validity: self.table.full_validity(),
        })
    }
}

/// Truncated Taylor expansion of one scalar quantity around one site.
#[derive(Clone)]
pub struct Jet {
    table: Arc<JetTable>,
    center: Arc<TangentSample>,
    coeff: Vec<f64>,
    validity: Validity,
}

impl Jet {
    pub fn value(&self) -> f64 {
        self.coeff[0]
    }

    pub fn validity(&self) -> &Validity {
        &self.validity
    }

    pub fn table(&self) -> &Arc<JetTable> {
        &self.table
    }

    pub fn center(&self) -> &Arc<TangentSample> {
        &self.center
    }

    fn compat(&self, other: &Jet) -> Result<()> {
        if !Arc::ptr_eq(&self.table, &other.table) {
            return Err(Error::CenterMismatch {
                left: format!("{:?}", self.table.region),
                right: format!("{:?}", other.table.region),
            });
        }
        if !Arc::ptr_eq(&self.center, &other.center) && *self.center != *other.center {
            return Err(Error::CenterMismatch {
                left: self.center.describe(),
                right: other.center.describe(),
            });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Jet) -> Result<Jet> {
        self.compat(other)?;
        let mut coeff = self.coeff.clone();
        for (c, o) in coeff.iter_mut().zip(&other.coeff) {
            *c += o;
        }
        Ok(Jet {
            table: self.table.clone(),
            center: self.center.clone(),
            coeff,
            validity: self.validity.meet(&other.validity),
        })
    }

    pub fn try_sub(&self, other: &Jet) -> Result<Jet> {
        self.compat(other)?;
        let mut coeff = self.coeff.clone();
        for (c, o) in coeff.iter_mut().zip(&other.coeff) {
            *c -= o;
        }
        Ok(Jet {
            table: self.table.clone(),
            center: self.center.clone(),
            coeff,
            validity: self.validity.meet(&other.validity),
        })
    }

    pub fn neg(&self) -> Jet {
        let mut out = self.clone();
        for c in &mut out.coeff {
            *c = -*c;
        }
        out
    }

    pub fn scale(&self, s: f64) -> Jet {
        let mut out = self.clone();
        for c in &mut out.coeff {
            *c *= s;
        }
        out
    }

    pub fn add_scalar(&self, s: f64) -> Jet {
        let mut out = self.clone();
        out.coeff[0] += s;
        out
    }

    pub fn try_mul(&self, other: &Jet) -> Result<Jet> {
        self.compat(other)?;
        let t = &*self.table;
        let validity = self.validity.meet(&other.validity);
        let mut coeff = vec![0.0; t.count];
        for o in 0..t.count {
            if !t.in_validity(o, &validity) {
                continue;
            }
            let mut acc = 0.0;
            let lo = t.pair_off[o] as usize;
            let hi = t.pair_off[o + 1] as usize;
            for p in lo..hi {
                acc += self.coeff[t.pair_i[p] as usize] * other.coeff[t.pair_j[p] as usize];
            }
            coeff[o] = acc;
        }
        Ok(Jet {
            table: self.table.clone(),
            center: self.center.clone(),
            coeff,
            validity,
        })
    }

    /// Division by a jet whose value must stay away from zero.
    pub fn try_div(&self, other: &Jet) -> Result<Jet> {
        self.compat(other)?;
        let d = other.value();
        if !d.is_finite() || d.abs() < 1e-290 {
            return Err(Error::DomainError {
                op: "div",
                detail: format!("denominator value {d}"),
            });
        }
        let t = &*self.table;
        let validity = self.validity.meet(&other.validity);
        let mut coeff = vec![0.0; t.count];
        // Graded recurrence: a = b * c solved for c.
        for o in 0..t.count {
            if !t.in_validity(o, &validity) {
                continue;
            }
            let mut acc = self.coeff[o];
            let lo = t.pair_off[o] as usize;
            let hi = t.pair_off[o + 1] as usize;
            for p in lo..hi {
                let j = t.pair_j[p] as usize;
                if j == 0 {
                    continue;
                }
                acc -= coeff[t.pair_i[p] as usize] * other.coeff[j];
            }
            coeff[o] = acc / d;
        }
        Ok(Jet {
            table: self.table.clone(),
            center: self.center.clone(),
            coeff,
            validity,
        })
    }

    pub fn sqrt(&self) -> Result<Jet> {
        let v = self.value();
        if !(v > 0.0) {
            return Err(Error::DomainError {
                op: "sqrt",
                detail: format!("value {v} not positive"),
            });
        }
        let t = &*self.table;
        let validity = self.validity.clone();
        let mut coeff = vec![0.0; t.count];
        let r0 = v.sqrt();
        coeff[0] = r0;
        for o in 1..t.count {
            if !t.in_validity(o, &validity) {
                continue;
            }
            let mut acc = self.coeff[o];
            let lo = t.pair_off[o] as usize;
            let hi = t.pair_off[o + 1] as usize;
            for p in lo..hi {
                let i = t.pair_i[p] as usize;
                let j = t.pair_j[p] as usize;
                if i == 0 || j == 0 {
                    continue;
                }
                acc -= coeff[i] * coeff[j];
            }
            coeff[o] = acc / (2.0 * r0);
        }
        Ok(Jet {
            table: self.table.clone(),
            center: self.center.clone(),
            coeff,
            validity,
        })
    }

    /// Analytic composition: `derivs[k]` must hold f^(k)(value)/k!. The
    /// nilpotent part is fed through a Horner scheme, exact on the
    /// truncated algebra.
    fn compose(&self, derivs: &[f64]) -> Result<Jet> {
        let mut u = self.clone();
        u.coeff[0] = 0.0;
        let scope_const = |c: f64| {
            let mut coeff = vec![0.0; self.table.count];
            coeff[0] = c;
            Jet {
                table: self.table.clone(),
                center: self.center.clone(),
                coeff,
                validity: self.validity.clone(),
            }
        };
        let mut r = scope_const(*derivs.last().unwrap());
        for k in (0..derivs.len() - 1).rev() {
            r = r.try_mul(&u)?;
            r.coeff[0] += derivs[k];
        }
        Ok(r)
    }

    fn horner_len(&self) -> usize {
        self.validity.total_budget() + 1
    }

    pub fn exp(&self) -> Result<Jet> {
        let v = self.value();
        if !v.is_finite() {
            return Err(Error::DomainError {
                op: "exp",
                detail: format!("value {v}"),
            });
        }
        let mut d = vec![0.0; self.horner_len()];
        d[0] = v.exp();
        for k in 1..d.len() {
            d[k] = d[k - 1] / k as f64;
        }
        self.compose(&d)
    }

    pub fn ln(&self) -> Result<Jet> {
        let v = self.value();
        if !(v > 0.0) {
            return Err(Error::DomainError {
                op: "ln",
                detail: format!("value {v} not positive"),
            });
        }
        let mut d = vec![0.0; self.horner_len()];
        d[0] = v.ln();
        if d.len() > 1 {
            d[1] = 1.0 / v;
            for k in 2..d.len() {
                d[k] = -d[k - 1] * (k as f64 - 1.0) / (k as f64 * v);
            }
        }
        self.compose(&d)
    }

    pub fn sin(&self) -> Result<Jet> {
        let v = self.value();
        let cycle = [v.sin(), v.cos(), -v.sin(), -v.cos()];
        let mut d = vec![0.0; self.horner_len()];
        let mut kfact = 1.0;
        for (k, dk) in d.iter_mut().enumerate() {
            if k > 0 {
                kfact *= k as f64;
            }
            *dk = cycle[k % 4] / kfact;
        }
        self.compose(&d)
    }

    pub fn cos(&self) -> Result<Jet> {
        let v = self.value();
        let cycle = [v.cos(), -v.sin(), -v.cos(), v.sin()];
        let mut d = vec![0.0; self.horner_len()];
        let mut kfact = 1.0;
        for (k, dk) in d.iter_mut().enumerate() {
            if k > 0 {
                kfact *= k as f64;
            }
            *dk = cycle[k % 4] / kfact;
        }
        self.compose(&d)
    }

    /// Real power of a positive-valued jet.
    pub fn powf(&self, r: f64) -> Result<Jet> {
        let v = self.value();
        if !(v > 0.0) {
            return Err(Error::DomainError {
                op: "powf",
                detail: format!("base value {v} not positive"),
            });
        }
        let mut d = vec![0.0; self.horner_len()];
        d[0] = v.powf(r);
        for k in 1..d.len() {
            d[k] = d[k - 1] * (r - (k as f64 - 1.0)) / (k as f64 * v);
        }
        self.compose(&d)
    }

    /// Integer power; works for any base value (including negative).
    pub fn powi(&self, p: i64) -> Result<Jet> {
        if p < 0 {
            let inv = self
                .clone_one()
                .try_div(self)
                .map_err(|_| Error::DomainError {
                    op: "powi",
                    detail: format!("negative power of zero value {}", self.value()),
                })?;
            return inv.powi(-p);
        }
        let mut acc = self.clone_one();
        let mut base = self.clone();
        let mut e = p as u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.try_mul(&base)?;
            }
            e >>= 1;
            if e > 0 {
                base = base.try_mul(&base)?;
            }
        }
        Ok(acc)
    }

    fn clone_one(&self) -> Jet {
        let mut coeff = vec![0.0; self.table.count];
        coeff[0] = 1.0;
        Jet {
            table: self.table.clone(),
            center: self.center.clone(),
            coeff,
            validity: self.validity.clone(),
        }
    }

    /// |self|; needs a definite sign at the center.
    pub fn abs(&self) -> Result<Jet> {
        let v = self.value();
        if v > 0.0 {
            Ok(self.clone())
        } else if v < 0.0 {
            Ok(self.neg())
        } else {
            Err(Error::DomainError {
                op: "abs",
                detail: "abs of a jet with value 0 is not differentiable".into(),
            })
        }
    }

    /// Coefficient shift: d/d(slot). Loses one valid order in the slot's
    /// group (grouped region) or in the slot itself (box region).
    pub fn deriv(&self, slot: usize) -> Result<Jet> {
        let t = &*self.table;
        if slot >= t.nvars {
            return Err(Error::InvalidSlot {
                slot,
                dim: t.n,
            });
        }
        let validity = match &self.validity {
            Validity::Grouped(vx, vy) => {
                if slot < t.n {
                    if *vx == 0 {
                        return Err(Error::OrderExceeded {
                            requested: (1, 0),
                            valid: (0, *vy as usize),
                        });
                    }
                    Validity::Grouped(vx - 1, *vy)
                } else {
                    if *vy == 0 {
                        return Err(Error::OrderExceeded {
                            requested: (0, 1),
                            valid: (*vx as usize, 0),
                        });
                    }
                    Validity::Grouped(*vx, vy - 1)
                }
            }
            Validity::Box(caps) => {
                if caps[slot] == 0 {
                    return Err(Error::OrderExceeded {
                        requested: (slot, 1),
                        valid: (slot, 0),
                    });
                }
                let mut c = caps.clone();
                c[slot] -= 1;
                Validity::Box(c)
            }
        };
        let mut coeff = vec![0.0; t.count];
        let up = &t.up[slot * t.count..(slot + 1) * t.count];
        for m in 0..t.count {
            if !t.in_validity(m, &validity) {
                continue;
            }
            let u = up[m];
            if u != u32::MAX {
                let e = t.exps_of(m)[slot] as f64;
                coeff[m] = (e + 1.0) * self.coeff[u as usize];
            }
        }
        Ok(Jet {
            table: self.table.clone(),
            center: self.center.clone(),
            coeff,
            validity,
        })
    }

    /// Partial derivative for a full 2n multi-index: m! * coefficient.
    pub fn partial(&self, mi: &[u8]) -> Result<f64> {
        let t = &*self.table;
        if mi.len() != t.nvars {
            return Err(Error::DimensionMismatch(format!(
                "multi-index length {} for {} variables",
                mi.len(),
                t.nvars
            )));
        }
        let sx: usize = mi[..t.n].iter().map(|e| *e as usize).sum();
        let sy: usize = mi[t.n..].iter().map(|e| *e as usize).sum();
        let ok = match &self.validity {
            Validity::Grouped(vx, vy) => sx <= *vx as usize && sy <= *vy as usize,
            Validity::Box(caps) => mi.iter().zip(caps).all(|(e, c)| e <= c),
        };
        if !ok {
            let valid = match &self.validity {
                Validity::Grouped(vx, vy) => (*vx as usize, *vy as usize),
                Validity::Box(_) => (0, 0),
            };
            return Err(Error::OrderExceeded {
                requested: (sx, sy),
                valid,
            });
        }
        match t.index.get(mi) {
            Some(ix) => Ok(self.coeff[*ix as usize] * t.fact[*ix as usize]),
            None => Err(Error::OrderExceeded {
                requested: (sx, sy),
                valid: (0, 0),
            }),
        }
    }

    /// Partial derivative along a list of slots (repeats allowed):
    /// `d(&[s1, s2])` is the mixed second partial by slots s1 and s2.
    pub fn d(&self, slots: &[usize]) -> Result<f64> {
        let t = &*self.table;
        let mut mi = vec![0u8; t.nvars];
        for s in slots {
            if *s >= t.nvars {
                return Err(Error::InvalidSlot { slot: *s, dim: t.n });
            }
            mi[*s] += 1;
        }
        self.partial(&mi)
    }

    /// Shrink this jet's validity to the meet with `cap`. Coefficients
    /// outside the new validity are kept in storage but treated as
    /// unspecified from here on. Used when a jet is assembled from data
    /// that is only trustworthy to a limited order, such as a sampled
    /// volume density whose higher derivatives were never estimated.
    pub fn restrict_validity(&self, cap: &Validity) -> Jet {
        Jet {
            table: self.table.clone(),
            center: self.center.clone(),
            coeff: self.coeff.clone(),
            validity: self.validity.meet(cap),
        }
    }

    /// Copy coefficients into a (sub-)table around the same center. The
    /// target region must be contained in the source validity.
    pub fn retable(&self, target: &Arc<JetTable>) -> Result<Jet> {
        let t = &*self.table;
        let tt = &**target;
        let mut coeff = vec![0.0; tt.count];
        for m in 0..tt.count {
            let e = tt.exps_of(m);
            let ok = match &self.validity {
                Validity::Grouped(vx, vy) => {
                    tt.deg_x[m] <= *vx && tt.deg_y[m] <= *vy
                }
                Validity::Box(caps) => e.iter().zip(caps).all(|(a, b)| a <= b),
            };
            if !ok {
                return Err(Error::OrderExceeded {
                    requested: (tt.deg_x[m] as usize, tt.deg_y[m] as usize),
                    valid: (0, 0),
                });
            }
            match t.index.get(e) {
                Some(ix) => coeff[m] = self.coeff[*ix as usize],
                None => {
                    return Err(Error::OrderExceeded {
                        requested: (tt.deg_x[m] as usize, tt.deg_y[m] as usize),
                        valid: (0, 0),
                    })
                }
            }
        }
        Ok(Jet {
            table: target.clone(),
            center: self.center.clone(),
            coeff,
            validity: tt.full_validity(),
        })
    }
}

// Readable Debug without dumping thousands of coefficients.
impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Jet(value={:.6e}, validity={:?}, region={:?})",
            self.value(),
            self.validity,
            self.table.region
        )
    }
}

macro_rules! impl_jet_op {
    ($trait:ident, $meth:ident, $inner:ident) => {
        impl std::ops::$trait for &Jet {
            type Output = Jet;
            fn $meth(self, rhs: &Jet) -> Jet {
                self.$inner(rhs)
                    .expect("jet operands share one scope by construction")
            }
        }
    };
}

impl_jet_op!(Add, add, try_add);
impl_jet_op!(Sub, sub, try_sub);
impl_jet_op!(Mul, mul, try_mul);

/// How primitive scalar fields are expanded into jets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Evaluate once in the full grouped algebra. Default for n <= 4.
    DenseTaylor,
    /// Evaluate once per direction-combination box and assemble the grouped
    /// table from harvested coefficients; the boxes stay small when the
    /// number of variables grows. Default above n = 4.
    DirectionalNested,
}

impl Strategy {
    pub fn default_for(n: usize) -> Strategy {
        if n <= 4 {
            Strategy::DenseTaylor
        } else {
            Strategy::DirectionalNested
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::DenseTaylor => "dense",
            Strategy::DirectionalNested => "directional",
        }
    }
}

/// Maximal boxes covering a grouped region: every x-composition of x_cap
/// paired with every y-composition of y_cap. Deterministic order.
fn covering_boxes(n: usize, x_cap: u8, y_cap: u8) -> Vec<Vec<u8>> {
    fn compositions(total: u8, parts: usize) -> Vec<Vec<u8>> {
        if parts == 1 {
            return vec![vec![total]];
        }
        let mut out = Vec::new();
        for first in 0..=total {
            for mut rest in compositions(total - first, parts - 1) {
                let mut v = vec![first];
                v.append(&mut rest);
                out.push(v);
            }
        }
        out
    }
    let xs = compositions(x_cap, n);
    let ys = compositions(y_cap, n);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for x in &xs {
        for y in &ys {
            let mut c = x.clone();
            c.extend_from_slice(y);
            out.push(c);
        }
    }
    out
}

/// Materialize a primitive scalar field as a jet on a grouped table.
///
/// The closure must evaluate the field in whatever scope it is handed and
/// return a jet that is fully valid there. Dense strategy: one evaluation
/// on the target table. Directional strategy: one evaluation per covering
/// box (the per-site memo), coefficients harvested box by box; the first
/// box providing a monomial wins, so assembly is deterministic.
pub fn materialize(
    strategy: Strategy,
    center: &Arc<TangentSample>,
    table: &Arc<JetTable>,
    f: &dyn Fn(&JetScope) -> Result<Jet>,
) -> Result<Jet> {
    match strategy {
        Strategy::DenseTaylor => {
            let scope = JetScope::new(table.clone(), center.clone())?;
            let jet = f(&scope)?;
            if !Arc::ptr_eq(jet.table(), table) {
                return Err(Error::InvalidConfig(
                    "materialized jet left its scope".into(),
                ));
            }
            Ok(jet)
        }
        Strategy::DirectionalNested => {
            let (n, x_cap, y_cap) = match &table.region {
                Region::Grouped { n, x_cap, y_cap } => (*n, *x_cap, *y_cap),
                Region::Box { .. } => {
                    return Err(Error::InvalidConfig(
                        "directional materialization targets grouped tables".into(),
                    ))
                }
            };
            let mut coeff = vec![0.0; table.count()];
            let mut have = vec![false; table.count()];
            for caps in covering_boxes(n, x_cap, y_cap) {
                if have.iter().all(|h| *h) {
                    break;
                }
                let box_table = JetTable::get(Region::Box { caps: caps.clone() });
                let scope = JetScope::new(box_table.clone(), center.clone())?;
                let jet = f(&scope)?;
                for m in 0..table.count() {
                    if have[m] {
                        continue;
                    }
                    let e = table.exps_of(m);
                    if e.iter().zip(&caps).all(|(a, b)| a <= b) {
                        let ix = box_table.index[e];
                        coeff[m] = jet.coeff[ix as usize];
                        have[m] = true;
                    }
                }
            }
            debug_assert!(have.iter().all(|h| *h));
            Ok(Jet {
                table: table.clone(),
                center: center.clone(),
                coeff,
                validity: table.full_validity(),
            })
        }
    }
}
