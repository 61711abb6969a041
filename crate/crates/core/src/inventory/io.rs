use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};

use super::{GfcBlock, Inventory, InventoryError, Item, ItemPool, Keying, ResponseSet, TraitDomain};

fn tsv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .flexible(true)
        .trim(csv::Trim::All)
        .quoting(false)
        .comment(Some(b'#'))
        .from_reader(reader)
}

fn tsv_writer<W: Write>(writer: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(writer)
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.eq_ignore_ascii_case(name))
}

fn require_column(headers: &csv::StringRecord, name: &str) -> Result<usize, InventoryError> {
    column(headers, name).ok_or_else(|| InventoryError::Malformed {
        row: 0,
        message: format!("missing `{name}` column in header"),
    })
}

/// Reads a tab-separated item pool (`id, text, domain, keying[, desirability]`)
/// and drops the `exclusions`. Row numbers in errors count data rows from 1.
pub fn load_item_pool<R: Read>(
    reader: R,
    exclusions: &[String],
) -> Result<ItemPool, InventoryError> {
    let mut rdr = tsv_reader(reader);
    let headers = rdr.headers()?.clone();
    let c_id = require_column(&headers, "id")?;
    let c_text = require_column(&headers, "text")?;
    let c_domain = require_column(&headers, "domain")?;
    let c_keying = require_column(&headers, "keying")?;
    let c_sd = column(&headers, "desirability");

    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("").to_string();
        let id = field(c_id);
        if id.is_empty() {
            return Err(InventoryError::Malformed { row, message: "empty id".into() });
        }
        if !seen.insert(id.clone()) {
            return Err(InventoryError::DuplicateId { row, id });
        }
        let domain: TraitDomain = field(c_domain)
            .parse()
            .map_err(|label| InventoryError::UnknownDomain { row, label })?;
        let keying: Keying = field(c_keying)
            .parse()
            .map_err(|value| InventoryError::InvalidKeying { row, value })?;
        let desirability = match c_sd.map(field).filter(|s| !s.is_empty()) {
            None => None,
            Some(s) => {
                let v: f64 = s.parse().map_err(|_| InventoryError::Malformed {
                    row,
                    message: format!("desirability `{s}` is not a number"),
                })?;
                if !(1.0..=9.0).contains(&v) {
                    return Err(InventoryError::DesirabilityOutOfRange { row, value: v });
                }
                Some(v)
            }
        };
        let text = field(c_text);
        if text.is_empty() {
            return Err(InventoryError::Malformed { row, message: format!("item `{id}` has empty text") });
        }
        items.push(Item { id, text, domain, keying, desirability });
    }
    if items.is_empty() {
        return Err(InventoryError::EmptyPool);
    }
    for ex in exclusions {
        if !seen.contains(ex) {
            return Err(InventoryError::UnknownExclusion(ex.clone()));
        }
    }
    items.retain(|it| !exclusions.contains(&it.id));
    ItemPool::new(items, exclusions.to_vec())
}

pub fn write_item_pool<W: Write>(pool: &ItemPool, writer: W) -> Result<(), InventoryError> {
    let mut w = tsv_writer(writer);
    w.write_record(["id", "text", "domain", "keying", "desirability"])?;
    for it in pool.items() {
        let sd = it.desirability.map(|s| s.to_string()).unwrap_or_default();
        let key = match it.keying {
            Keying::Positive => "+1",
            Keying::Negative => "-1",
        };
        w.write_record([it.id.as_str(), &it.text, it.domain.label(), key, &sd])?;
    }
    w.flush()?;
    Ok(())
}

/// Exclusion sidecar: one id per line, `#` starts a comment.
pub fn load_exclusions<R: Read>(reader: R) -> Result<Vec<String>, InventoryError> {
    let mut out = Vec::new();
    for line in BufReader::new(reader).lines() {
        let line = line?;
        let id = line.split('#').next().unwrap_or("").trim();
        if !id.is_empty() {
            out.push(id.to_string());
        }
    }
    Ok(out)
}

/// Reads `block, left, right[, gap]`. Gaps are recomputed from the pool when the
/// column is absent; when present the stored value is kept so that
/// [`super::validate_inventory`] can check it.
pub fn load_inventory<R: Read>(reader: R, pool: &ItemPool) -> Result<Inventory, InventoryError> {
    let mut rdr = tsv_reader(reader);
    let headers = rdr.headers()?.clone();
    let c_block = require_column(&headers, "block")?;
    let c_left = require_column(&headers, "left")?;
    let c_right = require_column(&headers, "right")?;
    let c_gap = column(&headers, "gap");
    let mut blocks = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("").to_string();
        let id = field(c_block);
        let (left, right) = (field(c_left), field(c_right));
        let mut block = GfcBlock::from_pool(id, &left, &right, pool)?;
        if let Some(g) = c_gap.map(field).filter(|s| !s.is_empty()) {
            block.desirability_gap = g.parse().map_err(|_| InventoryError::Malformed {
                row,
                message: format!("gap `{g}` is not a number"),
            })?;
        }
        blocks.push(block);
    }
    Ok(Inventory::new(blocks))
}

pub fn write_inventory<W: Write>(inv: &Inventory, writer: W) -> Result<(), InventoryError> {
    let mut w = tsv_writer(writer);
    w.write_record(["block", "left", "right", "gap"])?;
    for b in inv.blocks() {
        w.write_record([
            b.id.as_str(),
            &b.left,
            &b.right,
            &b.desirability_gap.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One JSON object per line.
pub fn write_response_sets<W: Write>(sets: &[ResponseSet], mut writer: W) -> Result<(), InventoryError> {
    for s in sets {
        serde_json::to_writer(&mut writer, s)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_response_sets<R: Read>(reader: R) -> Result<Vec<ResponseSet>, InventoryError> {
    let mut out = Vec::new();
    for line in BufReader::new(reader).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool_text(n: usize) -> String {
        let mut s = String::from("id\ttext\tdomain\tkeying\tdesirability\n");
        let doms = ["A", "C", "E", "N", "O"];
        for i in 0..n {
            let key = if i % 2 == 0 { "+1" } else { "-1" };
            s.push_str(&format!("i{i:03}\tStatement {i}.\t{}\t{key}\t{}\n", doms[i % 5], 1.0 + (i % 9) as f64));
        }
        s
    }

    #[test]
    fn hundred_rows_minus_two_exclusions() {
        let text = pool_text(100);
        let pool = load_item_pool(text.as_bytes(), &["i010".into(), "i042".into()]).unwrap();
        assert_eq!(pool.len(), 98);
        assert!(pool.get("i010").is_none());
        assert_eq!(pool.items()[10].id, "i011");
        assert_eq!(pool.excluded_ids(), ["i010", "i042"]);
    }

    #[test]
    fn empty_file_is_an_error() {
        let err = load_item_pool("id\ttext\tdomain\tkeying\n".as_bytes(), &[]).unwrap_err();
        assert_eq!(err.to_string(), "empty pool");
    }

    #[test]
    fn keying_zero_names_the_row() {
        let text = "id\ttext\tdomain\tkeying\na\tFoo.\tA\t+1\nb\tBar.\tC\t0\n";
        let err = load_item_pool(text.as_bytes(), &[]).unwrap_err();
        assert!(matches!(err, InventoryError::InvalidKeying { row: 2, .. }), "{err}");
        assert!(err.to_string().contains("row 2"));
    }

    #[test]
    fn other_row_errors() {
        let dup = "id\ttext\tdomain\tkeying\na\tFoo.\tA\t+1\na\tBar.\tC\t-1\n";
        assert!(matches!(load_item_pool(dup.as_bytes(), &[]), Err(InventoryError::DuplicateId { row: 2, .. })));
        let dom = "id\ttext\tdomain\tkeying\na\tFoo.\tQ\t+1\n";
        assert!(matches!(load_item_pool(dom.as_bytes(), &[]), Err(InventoryError::UnknownDomain { row: 1, .. })));
        let sd = "id\ttext\tdomain\tkeying\tdesirability\na\tFoo.\tA\t+1\t9.5\n";
        assert!(matches!(
            load_item_pool(sd.as_bytes(), &[]),
            Err(InventoryError::DesirabilityOutOfRange { row: 1, .. })
        ));
        let ex = "id\ttext\tdomain\tkeying\na\tFoo.\tA\t+1\n";
        assert!(matches!(
            load_item_pool(ex.as_bytes(), &["zz".into()]),
            Err(InventoryError::UnknownExclusion(_))
        ));
    }

    #[test]
    fn desirability_column_is_optional() {
        let text = "id\ttext\tdomain\tkeying\na\tFoo.\tA\t+1\n";
        let pool = load_item_pool(text.as_bytes(), &[]).unwrap();
        assert_eq!(pool.items()[0].desirability, None);
    }

    #[test]
    fn pool_and_inventory_files_round_trip() {
        let pool = load_item_pool(pool_text(10).as_bytes(), &[]).unwrap();
        let mut buf = Vec::new();
        write_item_pool(&pool, &mut buf).unwrap();
        let again = load_item_pool(buf.as_slice(), &[]).unwrap();
        assert_eq!(pool.items(), again.items());

        let inv = Inventory::new(vec![
            GfcBlock::from_pool("B01", "i000", "i001", &pool).unwrap(),
            GfcBlock::from_pool("B02", "i002", "i003", &pool).unwrap(),
        ]);
        let mut buf = Vec::new();
        write_inventory(&inv, &mut buf).unwrap();
        assert_eq!(load_inventory(buf.as_slice(), &pool).unwrap(), inv);
    }

    #[test]
    fn exclusion_sidecar_skips_comments() {
        let ids = load_exclusions("# voting items\nq1\n\n q7  # second\n".as_bytes()).unwrap();
        assert_eq!(ids, vec!["q1", "q7"]);
    }
}
