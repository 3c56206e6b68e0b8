//! Decomposes random two-qubit unitaries into single-qubit gates and three
//! CNOTs.

use qitekit::linalg::haar_unitary;
use qitekit::recompile::{kak_decompose, reconstruction_error};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> qitekit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let u = haar_unitary(4, &mut rng);
        let k = kak_decompose(&u)?;
        let c = k.circuit();
        println!(
            "interaction ({:+.4}, {:+.4}, {:+.4}): {} gates, {} CNOTs, error {:.1e}",
            k.interaction[0],
            k.interaction[1],
            k.interaction[2],
            c.len(),
            c.cnot_count(),
            reconstruction_error(&u, &c)?
        );
    }
    Ok(())
}
