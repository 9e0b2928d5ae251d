//! Decodes CIFAR binary batches. Pass a `data_batch_*.bin` path, or run
//! without arguments to decode two generated records.

use convnn::harness::{load_cifar_binary, parse_cifar};

fn main() -> convnn::Result<()> {
    let data = match std::env::args().nth(1) {
        Some(path) => load_cifar_binary(path, 10, 10)?,
        None => {
            let mut bytes = Vec::new();
            for label in [3u8, 7] {
                bytes.push(label);
                bytes.extend((0..3072).map(|i| (i % 256) as u8));
            }
            parse_cifar(&bytes, 0, 2, 10)?
        }
    };
    for (img, label) in data.images.iter().zip(&data.labels) {
        let mean = img.data().iter().sum::<f64>() / img.len() as f64;
        println!("label {label}: shape {:?}, normalized mean {mean:.4}", img.shape());
    }
    Ok(())
}
