//! Numeric form of an automaton: flow matrices, lowered constraints and affine resets.

use nalgebra::{DMatrix, DVector};

use crate::model::{Condition, HybridAutomaton, ModelError, Rel};
use crate::monitor::{EdgeInfo, ProductModel};

/// `coef·x + constant rel 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lin {
    pub coef: Vec<f64>,
    pub constant: f64,
    pub rel: Rel,
}

impl Lin {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.constant + self.coef.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Magnitude used to scale absolute tolerances.
    pub fn scale(&self, x: &[f64]) -> f64 {
        1.0 + self.constant.abs() + self.coef.iter().zip(x).map(|(a, b)| (a * b).abs()).sum::<f64>()
    }

    pub fn holds(&self, x: &[f64]) -> bool {
        self.rel.holds(self.value(x), 0.0)
    }

    /// Holds up to a relative slack of `rtol`.
    pub fn holds_within(&self, x: &[f64], rtol: f64) -> bool {
        let (v, e) = (self.value(x), rtol * self.scale(x));
        match self.rel {
            Rel::Le | Rel::Lt => v <= e,
            Rel::Ge | Rel::Gt => v >= -e,
            Rel::Eq => v.abs() <= e,
        }
    }
}

pub fn all_hold(cs: &[Lin], x: &[f64]) -> bool {
    cs.iter().all(|c| c.holds(x))
}

pub fn all_hold_within(cs: &[Lin], x: &[f64], rtol: f64) -> bool {
    cs.iter().all(|c| c.holds_within(x, rtol))
}

#[derive(Debug, Clone)]
pub struct CLocation {
    pub name: String,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub invariant: Vec<Lin>,
    pub urgent: bool,
}

#[derive(Debug, Clone)]
pub struct CEdge {
    pub source: usize,
    pub target: usize,
    /// Level part of the guard.
    pub guard: Vec<Lin>,
    /// Comparisons that must rise for the edge to fire; empty for ordinary edges.
    pub trigger: Vec<Lin>,
    pub priority: u8,
    pub model_jump: bool,
    /// Post-state `map·x + offset`.
    pub map: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl CEdge {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (&self.map * DVector::from_column_slice(x) + &self.offset).iter().copied().collect()
    }
}

#[derive(Debug, Clone)]
pub struct System {
    pub variables: Vec<String>,
    pub locations: Vec<CLocation>,
    pub edges: Vec<CEdge>,
    pub initial_location: usize,
    pub initial: Vec<Lin>,
}

fn lower(c: &Condition, ha: &HybridAutomaton) -> Result<Vec<Lin>, ModelError> {
    let scope = ha.scope();
    let mut out = Vec::new();
    for p in &c.conjuncts {
        if let Some(lc) = p.to_constraint(&scope)? {
            let coef = ha.variables.iter().map(|v| lc.expr.coeff(v)).collect();
            out.push(Lin { coef, constant: lc.expr.constant, rel: lc.rel });
        }
    }
    Ok(out)
}

impl System {
    pub fn dim(&self) -> usize {
        self.variables.len()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    /// Plain automaton: every transition is a model jump, none has a trigger.
    pub fn from_automaton(ha: &HybridAutomaton) -> Result<System, ModelError> {
        Self::build(ha, None)
    }

    pub fn from_product(pm: &ProductModel) -> Result<System, ModelError> {
        Self::build(&pm.automaton, Some(&pm.edges))
    }

    fn build(ha: &HybridAutomaton, infos: Option<&[EdgeInfo]>) -> Result<System, ModelError> {
        let n = ha.variables.len();
        let scope = ha.scope();
        let mut locations = Vec::new();
        for l in &ha.locations {
            let mut a = DMatrix::zeros(n, n);
            let mut b = DVector::zeros(n);
            for (i, v) in ha.variables.iter().enumerate() {
                let rhs = l.flow_of(v).ok_or_else(|| ModelError::Unresolved(format!("d/dt {v} in {}", l.name)))?;
                let lin = rhs.to_lin(&scope)?;
                for (j, w) in ha.variables.iter().enumerate() {
                    a[(i, j)] = lin.coeff(w);
                }
                b[i] = lin.constant;
            }
            locations.push(CLocation { name: l.name.clone(), a, b, invariant: lower(&l.invariant, ha)?, urgent: l.urgent });
        }
        let mut edges = Vec::new();
        for (k, t) in ha.transitions.iter().enumerate() {
            let info = infos.map(|i| &i[k]);
            let ntrig = info.and_then(|i| i.trigger.as_ref()).map_or(0, |c| c.conjuncts.len());
            let split = t.guard.conjuncts.len() - ntrig;
            let guard = lower(&Condition::new(t.guard.conjuncts[..split].to_vec()), ha)?;
            let trigger = lower(&Condition::new(t.guard.conjuncts[split..].to_vec()), ha)?;
            let mut map = DMatrix::identity(n, n);
            let mut offset = DVector::zeros(n);
            for (v, e) in &t.reset {
                let i = ha.variables.iter().position(|w| w == v).ok_or_else(|| ModelError::Unresolved(v.clone()))?;
                let lin = e.to_lin(&scope)?;
                for (j, w) in ha.variables.iter().enumerate() {
                    map[(i, j)] = lin.coeff(w);
                }
                offset[i] = lin.constant;
            }
            let idx = |name: &str| ha.location_index(name).ok_or_else(|| ModelError::Unresolved(name.to_string()));
            edges.push(CEdge {
                source: idx(&t.source)?,
                target: idx(&t.target)?,
                guard,
                trigger,
                priority: info.map_or(0, |i| i.priority),
                model_jump: info.is_none_or(|i| i.kind.is_model_jump()),
                map,
                offset,
            });
        }
        let initial_location =
            ha.location_index(&ha.initial.location).ok_or_else(|| ModelError::Unresolved(ha.initial.location.clone()))?;
        let initial = lower(&ha.initial.condition, ha)?;
        Ok(System { variables: ha.variables.clone(), locations, edges, initial_location, initial })
    }

    /// Exact flow over `dt`: `x(dt) = Φ x(0) + ψ`.
    pub fn propagator(&self, loc: usize, dt: f64) -> (DMatrix<f64>, DVector<f64>) {
        affine_propagator(&self.locations[loc].a, &self.locations[loc].b, dt)
    }
}

/// `e^{A dt}` and `∫₀^dt e^{A s} b ds`, read off the exponential of the augmented matrix.
pub fn affine_propagator(a: &DMatrix<f64>, b: &DVector<f64>, dt: f64) -> (DMatrix<f64>, DVector<f64>) {
    let n = a.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), DVector::zeros(0));
    }
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    m.view_mut((0, n), (n, 1)).copy_from(&(b * dt));
    let e = m.exp();
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, 1)).column(0).into_owned())
}

pub fn step_point(phi: &DMatrix<f64>, psi: &DVector<f64>, x: &[f64]) -> Vec<f64> {
    (phi * DVector::from_column_slice(x) + psi).iter().copied().collect()
}
