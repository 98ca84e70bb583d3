use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Writes `header` followed by one serialized row per item. The header is
/// written even when there are no rows.
pub(crate) fn write_rows<'a, T, W>(
    header: &[&str],
    rows: impl IntoIterator<Item = &'a T>,
    sink: W,
) -> csv::Result<()>
where
    T: Serialize + 'a,
    W: Write,
{
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(sink);
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`write_rows`], checking the header.
pub(crate) fn read_rows<T, R>(header: &[&str], source: R) -> Result<Vec<T>, String>
where
    T: DeserializeOwned,
    R: Read,
{
    let mut r = csv::Reader::from_reader(source);
    let found = r.headers().map_err(|e| e.to_string())?.clone();
    if !found.is_empty() && found.iter().ne(header.iter().copied()) {
        return Err(format!(
            "unexpected header {:?}, expected {}",
            found,
            header.join(",")
        ));
    }
    r.deserialize()
        .map(|row| {
            row.map_err(|e| match e.position() {
                Some(p) => format!("line {}: {e}", p.line()),
                None => e.to_string(),
            })
        })
        .collect()
}
