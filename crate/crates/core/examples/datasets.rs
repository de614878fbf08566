//! Loads a dataset and prints its stratified split. With no argument a
//! synthetic set is packed to a temporary file and read back; otherwise the
//! argument is a CIFAR-10 directory or a Tiny-ImageNet directory/pack.
//!
//!     cargo run --release --example datasets -- [path]

use std::path::Path;

use vitlab::data::{
    load_cifar, load_packed, load_tiny_imagenet, stratified_split, synthetic_dataset, write_packed, CifarVariant,
    NormStats, SplitSpec,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = match std::env::args().nth(1) {
        Some(p) if Path::new(&p).join("wnids.txt").is_file() || p.ends_with(".vlpk") => load_tiny_imagenet(Path::new(&p), true)?,
        Some(p) => load_cifar(Path::new(&p), CifarVariant::Cifar10, true)?,
        None => {
            let original = synthetic_dataset(30, 5, 16, 11);
            let path = std::env::temp_dir().join("vitlab-example.vlpk");
            write_packed(std::io::BufWriter::new(std::fs::File::create(&path)?), &original)?;
            let back = load_packed(&path, "synthetic", 5, NormStats::synthetic(3))?;
            println!("packed round trip identical: {}", back.images == original.images && back.labels == original.labels);
            back
        }
    };
    println!("{}: {} images, {}x{}x{}, {} classes", ds.name, ds.len(), ds.channels, ds.size, ds.size, ds.n_classes);
    let (train, val) = stratified_split(&ds, &SplitSpec::default())?;
    println!("train {} / val {}", train.len(), val.len());
    println!("train per class: {:?}", &train.class_counts()[..ds.n_classes.min(10)]);
    Ok(())
}
