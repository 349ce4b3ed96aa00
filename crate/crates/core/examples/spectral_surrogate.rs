//! The softmax-weighted k-th root norm surrogate against the dense spectral
//! radius, and the sampling bounds behind it.

use learned_schwarz::loss::{brute_force_rho, dense_surrogate, sketch_bound_check, norm_root_sequence, random_with_radius, LossVariant};

fn main() -> learned_schwarz::Result<()> {
    for rho in [0.5, 0.9] {
        let t = random_with_radius(30, rho, 1)?;
        let m = brute_force_rho(t.view())?;
        println!("target rho {rho}: eigen rho {:.4}, sigma_max {:.4}", m.rho, m.sigma_max);
        for k in [10, 30, 80] {
            let z = dense_surrogate(t.view(), k, 500, 2, LossVariant::SoftmaxOnly)?;
            println!("  K {k:2}: surrogate {z:.4} (error {:+.4})", z - rho);
        }
        let seq = norm_root_sequence(t.view(), 40)?;
        println!("  |T^k|^(1/k) at k = 1, 10, 40: {:.4} {:.4} {:.4}", seq[0], seq[9], seq[39]);
    }
    let t = random_with_radius(30, 0.9, 3)?;
    for m in [1, 10, 100] {
        let st = sketch_bound_check(t.view(), 25, m, 0.1, 200, 4)?;
        println!("m {m:3}: upper bound holds {:.3}, lower bound holds {:.3}", st.upper, st.lower);
    }
    Ok(())
}
