//! Long-format CSV input and output: one row per (market, product).
//!
//! Columns are `market_id, product_id, share, price, x_1.., z_1..` plus an
//! optional `outside_share`. Instruments and the outside share are market
//! level and must agree across a market's rows.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, MarketObservation, SHARE_SUM_TOL};

/// Upper bound on the raw inside-share total of a market.
pub const RAW_SUM_CAP: f64 = 1.0 + 1e-9;

/// Column names used by [`load_dataset`] and [`write_dataset`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub market: String,
    pub product: String,
    pub share: String,
    pub price: String,
    /// Characteristic columns are `<prefix><k>` for `k = 1, 2, ..`.
    pub x_prefix: String,
    pub z_prefix: String,
    pub outside_share: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            market: "market_id".into(),
            product: "product_id".into(),
            share: "share".into(),
            price: "price".into(),
            x_prefix: "x_".into(),
            z_prefix: "z_".into(),
            outside_share: "outside_share".into(),
        }
    }
}

fn numbered_columns(headers: &csv::StringRecord, prefix: &str) -> Vec<usize> {
    let mut found: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            h.strip_prefix(prefix)
                .and_then(|rest| rest.parse::<usize>().ok())
                .map(|k| (k, i))
        })
        .collect();
    found.sort_unstable();
    found.into_iter().map(|(_, i)| i).collect()
}

struct Partial {
    id: String,
    products: Vec<String>,
    shares: Vec<f64>,
    prices: Vec<f64>,
    x: Vec<f64>,
    z: Vec<f64>,
    outside: Option<f64>,
}

fn parse_num(raw: &str, what: &str, line: u64) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .map_err(|_| Error::data(format!("line {line}"), format!("cannot parse {what} '{raw}'")))
}

/// Read a dataset from CSV, rescaling inside shares that do not already sum
/// to one.
pub fn load_dataset(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, schema)
}

/// [`load_dataset`] from any reader.
pub fn read_dataset<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::data("header", format!("missing column '{name}'")))
    };
    let (c_market, c_product, c_share, c_price) =
        (col(&schema.market)?, col(&schema.product)?, col(&schema.share)?, col(&schema.price)?);
    let c_outside = headers.iter().position(|h| h == schema.outside_share);
    let xs = numbered_columns(&headers, &schema.x_prefix);
    let zs = numbered_columns(&headers, &schema.z_prefix);

    let mut order: HashMap<String, usize> = HashMap::new();
    let mut partial: Vec<Partial> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let market = field(c_market).to_string();
        let product = field(c_product).to_string();
        let share = parse_num(field(c_share), "share", line)?;
        if !(share > 0.0) {
            return Err(Error::data(
                format!("market {market}, product {product}"),
                format!("nonpositive share {share}"),
            ));
        }
        let price = parse_num(field(c_price), "price", line)?;
        let x = xs
            .iter()
            .map(|&i| parse_num(field(i), "characteristic", line))
            .collect::<Result<Vec<_>>>()?;
        let z = zs
            .iter()
            .map(|&i| parse_num(field(i), "instrument", line))
            .collect::<Result<Vec<_>>>()?;
        let outside = match c_outside.map(field) {
            Some(raw) if !raw.is_empty() => Some(parse_num(raw, "outside share", line)?),
            _ => None,
        };
        let idx = *order.entry(market.clone()).or_insert_with(|| {
            partial.push(Partial {
                id: market.clone(),
                products: Vec::new(),
                shares: Vec::new(),
                prices: Vec::new(),
                x: Vec::new(),
                z: z.clone(),
                outside,
            });
            partial.len() - 1
        });
        let m = &mut partial[idx];
        if m.products.contains(&product) {
            return Err(Error::data(format!("market {market}"), format!("duplicated product_id '{product}'")));
        }
        if m.z != z {
            return Err(Error::data(format!("market {market}"), "instruments differ across product rows"));
        }
        if m.outside != outside {
            return Err(Error::data(format!("market {market}"), "outside share differs across product rows"));
        }
        m.products.push(product);
        m.shares.push(share);
        m.prices.push(price);
        m.x.extend(x);
    }

    let mut markets = Vec::with_capacity(partial.len());
    let mut factors = Vec::with_capacity(partial.len());
    for m in partial {
        let total: f64 = m.shares.iter().sum();
        if !(total > 0.0 && total <= RAW_SUM_CAP) {
            return Err(Error::data(format!("market {}", m.id), format!("share sum {total} outside (0, 1]")));
        }
        let (shares, factor) = if (total - 1.0).abs() <= SHARE_SUM_TOL {
            (m.shares, None)
        } else {
            (m.shares.iter().map(|s| s / total).collect(), Some(total))
        };
        let mut obs = MarketObservation::new(m.id, shares, m.x, m.prices, m.z)?;
        if let Some(s0) = m.outside {
            obs = obs.with_outside_share(s0)?;
        }
        markets.push(obs);
        factors.push(factor);
    }
    Dataset::with_renormalization(markets, factors)
}

/// Write a dataset in the layout read by [`load_dataset`]. Products are
/// labelled `1..=J`.
pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>, schema: &CsvSchema) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset_to(dataset, file, schema)
}

/// [`write_dataset`] to any writer.
pub fn write_dataset_to<W: std::io::Write>(dataset: &Dataset, writer: W, schema: &CsvSchema) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let with_outside = dataset.markets().iter().any(|m| m.outside_share.is_some());
    let mut header = vec![
        schema.market.clone(),
        schema.product.clone(),
        schema.share.clone(),
        schema.price.clone(),
    ];
    header.extend((1..=dataset.n_chars()).map(|k| format!("{}{k}", schema.x_prefix)));
    header.extend((1..=dataset.n_instruments()).map(|k| format!("{}{k}", schema.z_prefix)));
    if with_outside {
        header.push(schema.outside_share.clone());
    }
    wtr.write_record(&header)?;
    for m in dataset.markets() {
        for j in 0..m.n_products() {
            let mut row = vec![
                m.market_id.clone(),
                (j + 1).to_string(),
                m.inside_shares[j].to_string(),
                m.prices[j].to_string(),
            ];
            row.extend(m.x_row(j).iter().map(f64::to_string));
            row.extend(m.instruments.iter().map(f64::to_string));
            if with_outside {
                row.push(m.outside_share.map(|v| v.to_string()).unwrap_or_default());
            }
            wtr.write_record(&row)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<Dataset> {
        read_dataset(text.as_bytes(), &CsvSchema::default())
    }

    #[test]
    fn parses_two_markets() {
        let d = read(
            "market_id,product_id,share,price,x_1,z_1\n\
             a,1,0.3,1.0,1,2\na,2,0.7,2.0,1,2\nb,1,0.5,1.5,1,3\nb,2,0.5,0.5,1,3\n",
        )
        .unwrap();
        assert_eq!((d.len(), d.n_products(), d.n_chars(), d.n_instruments()), (2, 2, 1, 1));
        assert_eq!(d.markets()[1].instruments, vec![3.0]);
        assert_eq!(d.renormalization(), &[None, None]);
    }

    #[test]
    fn renormalizes_raw_shares() {
        let d = read("market_id,product_id,share,price\na,1,0.2,1\na,2,0.2,1\n").unwrap();
        assert_eq!(d.markets()[0].inside_shares, vec![0.5, 0.5]);
        assert!((d.renormalization()[0].unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn rejects_zero_share() {
        let err = read("market_id,product_id,share,price\na,1,0,1\na,2,0.2,1\n").unwrap_err();
        assert!(err.to_string().contains("nonpositive share"), "{err}");
    }

    #[test]
    fn rejects_bad_layouts() {
        assert!(read("market_id,share,price\na,0.5,1\n").is_err());
        assert!(read("market_id,product_id,share,price\na,1,0.5,1\na,1,0.5,1\n").is_err());
        assert!(read("market_id,product_id,share,price\na,1,0.6,1\na,2,0.6,1\n").is_err());
        assert!(read("market_id,product_id,share,price,z_1\na,1,0.5,1,1\na,2,0.5,1,2\n").is_err());
    }

    #[test]
    fn orders_numbered_columns() {
        let d = read(
            "market_id,product_id,share,price,x_2,x_1,z_10,z_2\n\
             a,1,0.5,1,20,10,9,8\na,2,0.5,1,21,11,9,8\n",
        )
        .unwrap();
        assert_eq!(d.markets()[0].x, vec![10.0, 20.0, 11.0, 21.0]);
        assert_eq!(d.markets()[0].instruments, vec![8.0, 9.0]);
    }

    #[test]
    fn optional_outside_share() {
        let d = read("market_id,product_id,share,price,outside_share\na,1,0.5,1,0.4\na,2,0.5,1,0.4\n").unwrap();
        assert_eq!(d.markets()[0].outside_share, Some(0.4));
    }
}
