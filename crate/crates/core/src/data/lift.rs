//! Monomial features in graded-lexicographic order.

/// Exponent tuples of all monomials in `vars` variables with total degree
/// `<= degree`, constant first. Within one degree, tuples are ordered
/// lexicographically from the highest power of the first variable down,
/// e.g. `1, a, b, c, a², ab, ac, b², bc, c², …` for three variables.
pub fn monomial_exponents(vars: usize, degree: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for d in 0..=degree {
        let mut current = vec![0u32; vars];
        fill_degree(&mut out, &mut current, 0, d);
    }
    out
}

fn fill_degree(out: &mut Vec<Vec<u32>>, current: &mut [u32], var: usize, remaining: u32) {
    if var + 1 == current.len() {
        current[var] = remaining;
        out.push(current.to_vec());
        return;
    }
    if current.is_empty() {
        if remaining == 0 {
            out.push(Vec::new());
        }
        return;
    }
    for e in (0..=remaining).rev() {
        current[var] = e;
        fill_degree(out, current, var + 1, remaining - e);
    }
    current[var] = 0;
}

pub fn monomial(x: &[f64], exps: &[u32]) -> f64 {
    x.iter().zip(exps).map(|(v, &e)| v.powi(e as i32)).product()
}

/// Human-readable monomial name using the given variable names, e.g. `z1^2 z3`.
pub fn monomial_name(exps: &[u32], names: &[&str]) -> String {
    let parts: Vec<String> = exps
        .iter()
        .zip(names)
        .filter(|(&e, _)| e > 0)
        .map(|(&e, n)| {
            if e == 1 {
                (*n).to_string()
            } else {
                format!("{n}^{e}")
            }
        })
        .collect();
    if parts.is_empty() {
        "1".to_string()
    } else {
        parts.join(" ")
    }
}

/// Degree of the observation lift.
pub const LIFT_DEGREE: u32 = 5;
/// Number of monomials of degree `<= 5` in three variables, `C(8, 3)`.
pub const LIFT_DIM: usize = 56;

/// Maps a 3-state to all 56 monomials of degree `<= 5`.
pub fn poly_lift(z: &[f64; 3]) -> Vec<f64> {
    lift_exponents().iter().map(|e| monomial(z, e)).collect()
}

/// Time derivative of [`poly_lift`] along `ż` by the product rule.
pub fn lift_derivative(z: &[f64; 3], zdot: &[f64; 3]) -> Vec<f64> {
    lift_exponents()
        .iter()
        .map(|e| {
            (0..3)
                .filter(|&i| e[i] > 0)
                .map(|i| {
                    let mut reduced = e.clone();
                    reduced[i] -= 1;
                    e[i] as f64 * monomial(z, &reduced) * zdot[i]
                })
                .sum()
        })
        .collect()
}

fn lift_exponents() -> &'static [Vec<u32>] {
    static EXPS: std::sync::OnceLock<Vec<Vec<u32>>> = std::sync::OnceLock::new();
    EXPS.get_or_init(|| monomial_exponents(3, LIFT_DEGREE))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binomial(n: u64, k: u64) -> u64 {
        (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
    }

    #[test]
    fn monomial_count_matches_stars_and_bars() {
        for vars in 1..5 {
            for deg in 0..6u32 {
                let n = monomial_exponents(vars, deg).len() as u64;
                assert_eq!(
                    n,
                    binomial(vars as u64 + deg as u64, vars as u64),
                    "vars {vars} deg {deg}"
                );
            }
        }
        assert_eq!(monomial_exponents(3, 5).len(), LIFT_DIM);
    }

    #[test]
    fn lift_order_is_graded_lexicographic() {
        let names = ["z1", "z2", "z3"];
        let e = monomial_exponents(3, 5);
        let head: Vec<String> = e[..10].iter().map(|x| monomial_name(x, &names)).collect();
        assert_eq!(
            head,
            ["1", "z1", "z2", "z3", "z1^2", "z1 z2", "z1 z3", "z2^2", "z2 z3", "z3^2"]
        );
        assert_eq!(monomial_name(e.last().unwrap(), &names), "z3^5");
    }

    #[test]
    fn lift_of_special_points() {
        let zero = poly_lift(&[0.0, 0.0, 0.0]);
        assert_eq!(zero[0], 1.0);
        assert!(zero[1..].iter().all(|&v| v == 0.0));
        assert!(poly_lift(&[1.0, 1.0, 1.0]).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn lift_derivative_of_low_order_terms() {
        let d = lift_derivative(&[0.3, 0.5, 0.7], &[1.0, -2.0, 0.25]);
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 1.0);
        assert_eq!(d[2], -2.0);
        assert_eq!(d[3], 0.25);
    }

    #[test]
    fn lift_derivative_matches_central_difference() {
        let z = [0.41, 0.23, 0.77];
        let zdot = [0.05, -0.12, 0.3];
        let h = 1e-6;
        let shift = |s: f64| [z[0] + s * zdot[0], z[1] + s * zdot[1], z[2] + s * zdot[2]];
        let up = poly_lift(&shift(h));
        let down = poly_lift(&shift(-h));
        let d = lift_derivative(&z, &zdot);
        for k in 0..LIFT_DIM {
            let fd = (up[k] - down[k]) / (2.0 * h);
            assert!(
                (d[k] - fd).abs() <= 1e-4 * d[k].abs().max(1e-6),
                "monomial {k}: {} vs {fd}",
                d[k]
            );
        }
    }
}
