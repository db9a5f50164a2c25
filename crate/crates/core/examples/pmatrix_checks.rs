//! Principal minors, P-matrix classification, sign-reversal witnesses,
//! margins and the Cauchy–Binet identity on small matrices.

use mect::error::Result;
use mect::linmap::adaptive_candidate;
use mect::pmatrix::{
    find_sign_reversal_witness, is_p_matrix, p_matrix_margin, principal_minors, product_minor, MinorIndex,
};
use nalgebra::DMatrix;

fn main() -> Result<()> {
    let cases = [
        ("tridiagonal", DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0])),
        ("rotation", DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])),
        ("non-symmetric P", DMatrix::from_row_slice(2, 2, &[1.0, -3.0, 0.0, 1.0])),
    ];
    for (name, a) in &cases {
        let c = is_p_matrix(a)?;
        println!("{name}: P {} PQD {} SDD {}", c.is_p, c.is_pqd, c.is_sdd);
        for (k, v) in principal_minors(a)? {
            println!("  [A]_{k} = {v}");
        }
        match (c.failing_minor, find_sign_reversal_witness(a)?) {
            (Some(k), Some(w)) => println!("  fails at {k}; witness x = {:?}", w.as_slice()),
            _ => println!("  margin sup{{λ: A − λI is P}} ≥ {:.10}", p_matrix_margin(a)?),
        }
    }

    // a member of 𝓜_2 leaves every minor not involving index 2 unchanged
    let j = DMatrix::from_row_slice(3, 3, &[3.0, 1.0, 0.5, 1.0, 2.0, 1.5, 0.2, 0.7, 1.0]);
    let a = adaptive_candidate(3, 2, 9)?.a;
    println!("A in M_2 = {a}");
    for k in MinorIndex::table_order(3) {
        let cb = product_minor(&a, &j, k, k)?;
        let direct = mect::pmatrix::principal_minor(&(&a * &j), k)?;
        let original = mect::pmatrix::principal_minor(&j, k)?;
        println!("  [AJ]_{k}: Cauchy–Binet {cb:+.6}, direct {direct:+.6}, [J]_{k} {original:+.6}");
    }
    Ok(())
}
