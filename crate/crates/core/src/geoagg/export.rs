//! Choropleth and tabular exports of published cells.

use std::io::Write;

use serde_json::{json, Map, Value};

use super::aggregate::AggregateCell;

/// FeatureCollection with one polygon per published cell; suppressed cells are omitted.
pub fn to_geojson<'a>(cells: impl IntoIterator<Item = &'a AggregateCell>) -> Value {
    let features: Vec<Value> = cells
        .into_iter()
        .filter(|c| c.published)
        .map(|c| {
            let b = c.geohash.bbox();
            let ring = [
                [b.min_lon, b.min_lat],
                [b.max_lon, b.min_lat],
                [b.max_lon, b.max_lat],
                [b.min_lon, b.max_lat],
                [b.min_lon, b.min_lat],
            ];
            let mut props = Map::new();
            props.insert("geohash".into(), json!(c.geohash.as_str()));
            props.insert("n_votes".into(), json!(c.n_votes));
            props.insert("n_voters".into(), json!(c.n_voters));
            for (k, s) in &c.stats {
                props.insert(format!("{k}.mean"), json!(s.mean));
                props.insert(format!("{k}.sum"), json!(s.sum));
                props.insert(format!("{k}.n"), json!(s.n));
            }
            json!({
                "type": "Feature",
                "geometry": { "type": "Polygon", "coordinates": [ring] },
                "properties": props,
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

/// Long-format CSV: one row per published cell and indicator.
pub fn write_csv<'a, W: Write>(w: W, cells: impl IntoIterator<Item = &'a AggregateCell>) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["geohash", "n_votes", "n_voters", "indicator", "n", "sum", "mean", "histogram"])?;
    for c in cells.into_iter().filter(|c| c.published) {
        for (k, s) in &c.stats {
            let hist = s
                .histogram
                .as_ref()
                .map(|h| h.iter().map(u64::to_string).collect::<Vec<_>>().join(";"))
                .unwrap_or_default();
            out.write_record([
                c.geohash.as_str(),
                &c.n_votes.to_string(),
                &c.n_voters.to_string(),
                k,
                &s.n.to_string(),
                &s.sum.to_string(),
                &s.mean.to_string(),
                &hist,
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geoagg::aggregate::{aggregate_grid, Contribution};
    use crate::geoagg::geohash::Geohash;
    use std::collections::BTreeMap;

    fn cells() -> Vec<AggregateCell> {
        let mut cs = Vec::new();
        for (gh, voters) in [("sx0b1c2", 5), ("sx0b1c3", 4)] {
            for v in 0..voters {
                cs.push(Contribution {
                    geohash: Geohash::parse(gh).unwrap(),
                    voter: format!("v{v}"),
                    values: BTreeMap::from([("steps_per_hour".to_string(), 100.0 * (v + 1) as f64)]),
                });
            }
        }
        aggregate_grid(&cs, 7, 5, &BTreeMap::from([("steps_per_hour".to_string(), vec![0.0, 250.0, 1000.0])]))
            .unwrap()
            .into_values()
            .collect()
    }

    #[test]
    fn geojson_omits_suppressed_cells() {
        let g = to_geojson(&cells());
        let f = g["features"].as_array().unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0]["properties"]["geohash"], "sx0b1c2");
        assert_eq!(f[0]["properties"]["steps_per_hour.mean"], 300.0);
        assert_eq!(f[0]["geometry"]["coordinates"][0].as_array().unwrap().len(), 5);
    }

    #[test]
    fn csv_rows() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &cells()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1], "sx0b1c2,5,5,steps_per_hour,5,1500,300,2;3");
    }
}
