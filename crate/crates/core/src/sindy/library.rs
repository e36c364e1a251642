use serde::{Deserialize, Serialize};

use crate::data::lift::{monomial, monomial_exponents, monomial_name};
use crate::error::{Error, Result};
use crate::nn::{Graph, NodeId, Tensor};
use crate::sim::signed_sqrt;

/// One scalar candidate function of the state vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Candidate {
    Constant,
    /// Product of powers, one exponent per state variable.
    Monomial {
        exps: Vec<u32>,
    },
    Sin {
        var: usize,
    },
    Cos {
        var: usize,
    },
    /// `sign(x_a − x_b) · sqrt(|x_a − x_b|)`.
    PairSqrt {
        a: usize,
        b: usize,
    },
    /// `sign(x_a) · sqrt(|x_a|)`.
    UnarySqrt {
        var: usize,
    },
}

impl Candidate {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Candidate::Constant => 1.0,
            Candidate::Monomial { exps } => monomial(x, exps),
            Candidate::Sin { var } => x[*var].sin(),
            Candidate::Cos { var } => x[*var].cos(),
            Candidate::PairSqrt { a, b } => signed_sqrt(x[*a] - x[*b]),
            Candidate::UnarySqrt { var } => signed_sqrt(x[*var]),
        }
    }

    pub fn name(&self, vars: &[String]) -> String {
        match self {
            Candidate::Constant => "1".into(),
            Candidate::Monomial { exps } => {
                let refs: Vec<&str> = vars.iter().map(String::as_str).collect();
                monomial_name(exps, &refs)
            }
            Candidate::Sin { var } => format!("sin({})", vars[*var]),
            Candidate::Cos { var } => format!("cos({})", vars[*var]),
            Candidate::PairSqrt { a, b } => format!("ssqrt({}-{})", vars[*a], vars[*b]),
            Candidate::UnarySqrt { var } => format!("ssqrt({})", vars[*var]),
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Candidate::Constant => None,
            Candidate::Monomial { exps } => exps.len().checked_sub(1),
            Candidate::Sin { var } | Candidate::Cos { var } | Candidate::UnarySqrt { var } => {
                Some(*var)
            }
            Candidate::PairSqrt { a, b } => Some(*a.max(b)),
        }
    }
}

/// Which families to include when building a library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LibraryConfig {
    /// Highest total polynomial degree; 0 keeps only the constant.
    pub poly_degree: u32,
    pub trig: bool,
    pub pair_sqrt: bool,
    pub unary_sqrt: bool,
}

impl Default for LibraryConfig {
    /// Constant, linear and quadratic monomials, sines, cosines and both
    /// signed-square-root families.
    fn default() -> Self {
        Self {
            poly_degree: 2,
            trig: true,
            pair_sqrt: true,
            unary_sqrt: true,
        }
    }
}

impl LibraryConfig {
    pub fn without_sqrt(self) -> Self {
        Self {
            pair_sqrt: false,
            unary_sqrt: false,
            ..self
        }
    }
}

/// Ordered, uniquely named set of candidate functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateLibrary {
    pub vars: Vec<String>,
    pub functions: Vec<Candidate>,
}

impl CandidateLibrary {
    pub fn new(vars: Vec<String>, functions: Vec<Candidate>) -> Result<Self> {
        let lib = Self { vars, functions };
        lib.validate()?;
        Ok(lib)
    }

    /// Library over `vars` in family order: polynomials (graded-lex, constant
    /// first), sines, cosines, pairwise then unary signed square roots.
    pub fn build(vars: &[&str], config: LibraryConfig) -> Self {
        let m = vars.len();
        let mut functions: Vec<Candidate> = monomial_exponents(m, config.poly_degree)
            .into_iter()
            .map(|exps| {
                if exps.iter().all(|&e| e == 0) {
                    Candidate::Constant
                } else {
                    Candidate::Monomial { exps }
                }
            })
            .collect();
        if config.trig {
            functions.extend((0..m).map(|var| Candidate::Sin { var }));
            functions.extend((0..m).map(|var| Candidate::Cos { var }));
        }
        if config.pair_sqrt {
            for a in 0..m {
                functions.extend((a + 1..m).map(|b| Candidate::PairSqrt { a, b }));
            }
        }
        if config.unary_sqrt {
            functions.extend((0..m).map(|var| Candidate::UnarySqrt { var }));
        }
        Self {
            vars: vars.iter().map(|s| s.to_string()).collect(),
            functions,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for f in &self.functions {
            if f.max_var().is_some_and(|v| v >= self.vars.len()) {
                return Err(Error::Config(format!(
                    "candidate {f:?} refers to a missing variable"
                )));
            }
            if let Candidate::Monomial { exps } = f {
                if exps.len() != self.vars.len() {
                    return Err(Error::Config(format!("monomial {exps:?} has wrong arity")));
                }
            }
        }
        let names = self.names();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Config(format!("duplicate library function `{n}`")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.vars.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.functions.iter().map(|f| f.name(&self.vars)).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names().iter().position(|n| n == name)
    }

    pub fn eval_row(&self, x: &[f64]) -> Vec<f64> {
        self.functions.iter().map(|f| f.eval(x)).collect()
    }

    /// Library evaluated row-wise, `s × p`.
    pub fn theta(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.state_dim() {
            return Err(Error::shape(
                "library input",
                &[self.state_dim()],
                &[x.cols()],
            ));
        }
        if !x.all_finite() {
            return Err(Error::Domain(
                "library input contains non-finite values".into(),
            ));
        }
        let p = self.len();
        let mut data = Vec::with_capacity(x.rows() * p);
        for r in 0..x.rows() {
            data.extend(self.eval_row(x.row(r)));
        }
        Tensor::new(x.rows(), p, data)
    }

    /// Differentiable `Θ(x)` for a batch node `x` of shape `n × m`.
    pub fn theta_node(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let n = g.shape(x)[0];
        let cols: Vec<NodeId> = (0..self.state_dim())
            .map(|i| g.slice_cols(x, i, i + 1))
            .collect();
        let mut parts = Vec::with_capacity(self.len());
        for f in &self.functions {
            let node = match f {
                Candidate::Constant => g.constant(Tensor::ones(n, 1)),
                Candidate::Monomial { exps } => {
                    let mut acc: Option<NodeId> = None;
                    for (i, &e) in exps.iter().enumerate() {
                        for _ in 0..e {
                            acc = Some(match acc {
                                None => cols[i],
                                Some(a) => g.mul(a, cols[i]),
                            });
                        }
                    }
                    acc.expect("non-constant monomial")
                }
                Candidate::Sin { var } => g.sin(cols[*var]),
                Candidate::Cos { var } => g.cos(cols[*var]),
                Candidate::PairSqrt { a, b } => {
                    let d = g.sub(cols[*a], cols[*b]);
                    g.signed_sqrt(d)
                }
                Candidate::UnarySqrt { var } => g.signed_sqrt(cols[*var]),
            };
            parts.push(node);
        }
        g.concat_cols(&parts)
    }
}
