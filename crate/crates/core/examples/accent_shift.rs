//! Computes anchors, accent shift and bimodal output of a LASAS block on a
//! toy input, and shows that anchors ignore the acoustics.

use lasas::lasas::{LasasBlock, LasasConfig, SpaceDimMode};
use lasas::numerics::{Matrix, ParamStore};
use lasas::tokenizer::{one_hot, SubwordId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lasas::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (acoustic_dim, vocab, frames) = (6, 5, 4);
    let config = LasasConfig {
        spaces: 2,
        hidden: 8,
        reduced_text_dim: 3,
        space_dim_mode: SpaceDimMode::Full,
    };
    let mut store = ParamStore::new();
    let block = LasasBlock::new(config, acoustic_dim, vocab, &mut store, &mut rng)?;

    let ids = [SubwordId(2), SubwordId(2), SubwordId(0), SubwordId(4)];
    let x_t = one_hot(&ids, vocab)?;
    let random = |rng: &mut ChaCha8Rng| {
        let data = (0..frames * acoustic_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(frames, acoustic_dim, data)
    };
    let x_a = random(&mut rng)?;
    let out = block.compute(&store, &x_a, &x_t)?;
    println!("accent shift S (frames x spaces):");
    for r in 0..frames {
        println!("  {:?}", out.shift.row(r));
    }
    println!("bimodal width: {}", out.bimodal.cols());

    let other = block.compute(&store, &random(&mut rng)?, &x_t)?;
    let same = out.anchors.iter().zip(&other.anchors).all(|(a, b)| a == b);
    println!("anchors unchanged under new acoustics: {same}");
    println!("frames 0 and 1 share a subword, so their anchors match: {}", out.anchors[0].row(0) == out.anchors[0].row(1));
    Ok(())
}
