//! Herding order, cost-aware packing into a class share, and the fixed-budget
//! rebalance that trims every class when new ones arrive.

use cimcil::compression::compress;
use cimcil::memory::{herding_order, l2_normalize, pack_exemplars, rebalance_fixed, ExemplarStore, StoredExemplar};
use cimcil::{BBox, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> cimcil::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let feats: Vec<Vec<f64>> = (0..12)
        .map(|_| {
            let mut f: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
            l2_normalize(&mut f);
            f
        })
        .collect();
    let order = herding_order(&feats);
    println!("herding order: {order:?}");

    let costs: Vec<f64> = (0..12).map(|_| rng.random_range(0.2..0.6)).collect();
    let share = 4.0;
    let packed = pack_exemplars(0, &order, &costs, share)?;
    let unit = pack_exemplars(0, &order, &[1.0; 12], share)?;
    println!(
        "share {share}: {} compressed exemplars (cost {:.3}) vs {} uncompressed",
        packed.len(),
        packed.iter().map(|&i| costs[i]).sum::<f64>(),
        unit.len()
    );

    let img = Image::filled(8, 8, 3, 0);
    let mut store = ExemplarStore::new();
    for class in 0..2 {
        let list = (0..10)
            .map(|k| {
                let mut ex = compress(&img, &BBox::new(0, 0, 3, 3), 4.0)?;
                ex.cost = costs[k];
                Ok(StoredExemplar {
                    id: (class * 10 + k) as u64,
                    phase: 1,
                    class,
                    exemplar: ex,
                    checksum: String::new(),
                })
            })
            .collect::<cimcil::Result<_>>()?;
        store.insert_class(class, list);
    }
    let ledger = rebalance_fixed(&mut store, 8.0, 4);
    println!(
        "after rebalance to 4 seen classes: per class {:?}, total cost {:.3} of 8",
        (0..2).map(|c| store.class_len(c)).collect::<Vec<_>>(),
        ledger.total()
    );
    Ok(())
}
