//! Writes the sample datasets under `data/`.

use nalgebra::DVector;
use structcov::simulate::{gaussian_designs, simulate_dataset};
use structcov::{LinearStructure, ThetaVector};

fn main() -> structcov::Result<()> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let cs = LinearStructure::compound_symmetry(3)?;
    let theta = ThetaVector::new(&[1.0, 0.5]);
    let beta = DVector::from_column_slice(&[1.0, -1.0]);
    let designs = gaussian_designs(200, 3, 2, 42);
    let data = simulate_dataset(&cs, &theta, &beta, &designs, 42, 0)?;
    data.to_csv_path(dir.join("cs3_regression.csv"))?;
    std::fs::write(dir.join("cs3_regression.json"), data.to_json_string()?)?;
    std::fs::write(
        dir.join("compound_symmetry_3.json"),
        "{\"kind\": \"compound-symmetry\", \"dim\": 3}\n",
    )?;
    println!("wrote {}", dir.display());
    Ok(())
}
