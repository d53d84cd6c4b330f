// Throwaway: find a minimal grid where impl != oracle.
use threec::seeding::regional_minima_2d;
use threec::volume::Grid;
use std::collections::{BTreeSet, VecDeque};

fn minima_oracle(section: &Grid<f32>, h: f64) -> Vec<BTreeSet<usize>> {
    let cols = section.cols();
    let mut regions: Vec<BTreeSet<usize>> = Vec::new();
    for m in 0..section.rows() * cols {
        let vm = section.values()[m] as f64;
        let mut comp = BTreeSet::new();
        let mut queue = VecDeque::from([m]);
        comp.insert(m);
        let mut min_seen = vm;
        while let Some(p) = queue.pop_front() {
            let (y, x) = (p / cols, p % cols);
            for (ny, nx) in section.neighbors4(y, x) {
                let q = ny * cols + nx;
                let vq = section.values()[q] as f64;
                if vq <= vm + h && !comp.contains(&q) {
                    comp.insert(q);
                    min_seen = min_seen.min(vq);
                    queue.push_back(q);
                }
            }
        }
        if min_seen == vm && !regions.contains(&comp) {
            regions.push(comp);
        }
    }
    regions.sort_by_key(|r| *r.iter().next().unwrap());
    regions
}

fn marker_regions(markers: &Grid<u32>) -> Vec<BTreeSet<usize>> {
    let mut by_label: std::collections::HashMap<u32, BTreeSet<usize>> = Default::default();
    for (i, &v) in markers.values().iter().enumerate() {
        if v != 0 { by_label.entry(v).or_default().insert(i); }
    }
    let mut regions: Vec<_> = by_label.into_values().collect();
    regions.sort_by_key(|r| *r.iter().next().unwrap());
    regions
}

fn main() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    for trial in 0..200000 {
        let side = 3;
        let quant = 8;
        let section = Grid::from_fn(side, side, |_, _| (rng.gen_range(0..quant) as f32) / quant as f32);
        let h = 0.15;
        let got = marker_regions(&regional_minima_2d(&section, h));
        let want = minima_oracle(&section, h);
        if got != want {
            println!("MISMATCH at trial {trial}");
            for y in 0..side { for x in 0..side { print!("{:5.2} ", section.get(y,x)); } println!(); }
            println!("impl: {:?}", got);
            println!("oracle: {:?}", want);
            return;
        }
    }
    println!("no mismatch in 3x3; trying 4x4 continuous");
    for trial in 0..100000 {
        let side = 4;
        let section = Grid::from_fn(side, side, |_, _| rng.gen::<f32>());
        let h = 0.1;
        let got = marker_regions(&regional_minima_2d(&section, h));
        let want = minima_oracle(&section, h);
        if got != want {
            println!("MISMATCH at trial {trial}");
            for y in 0..side { for x in 0..side { print!("{:6.3} ", section.get(y,x)); } println!(); }
            println!("impl: {:?}", got);
            println!("oracle: {:?}", want);
            return;
        }
    }
    println!("no mismatch found");
}
