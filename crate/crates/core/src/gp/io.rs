use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::Result;
use crate::geometry::Point;

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    x: f64,
    y: f64,
    value: f64,
}

/// Reads an `x,y,value` CSV in acquisition order.
pub fn read_dataset_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut data = Dataset::default();
    for row in rdr.deserialize() {
        let row: Row = row?;
        data.push(Point::new(row.x, row.y), row.value);
    }
    Ok(data)
}

pub fn write_dataset_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for (p, v) in data.locations().iter().zip(data.measurements()) {
        wtr.serialize(Row { x: p.x, y: p.y, value: *v })?;
    }
    wtr.flush()?;
    Ok(())
}
