use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::scene::{Background, CarColor, CarType};

/// Per-car attributes a scene is grouped by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarAttributes {
    pub car_type: CarType,
    pub color: CarColor,
    /// View azimuth under which the camera sees the car.
    pub azimuth_deg: f64,
    pub occlusion_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAttributes {
    pub scene_id: String,
    pub background: Background,
    pub cars: Vec<CarAttributes>,
}

pub const ROTATION_BINS: usize = 9;

/// Bin of `|azimuth|` over nine 20° bins on `[0, 180]`, the last one closed.
pub fn rotation_bin(azimuth_deg: f64) -> usize {
    let a = azimuth_deg.abs().min(180.0);
    ((a / 20.0).floor() as usize).min(ROTATION_BINS - 1)
}

pub fn rotation_bin_label(bin: usize) -> String {
    let lo = bin * 20;
    if bin + 1 == ROTATION_BINS {
        format!("[{lo},{}]", lo + 20)
    } else {
        format!("[{lo},{})", lo + 20)
    }
}

/// Cars seen almost exactly from the side: `|azimuth|` in `[0, 10] ∪ [170, 180]`.
pub fn is_side_view(azimuth_deg: f64) -> bool {
    let a = azimuth_deg.abs();
    a <= 10.0 || a >= 170.0
}

fn index_of<T: PartialEq>(all: &[T], item: &T) -> usize {
    all.iter().position(|x| x == item).unwrap_or(usize::MAX)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    CarType,
    Background,
    ColorType,
    BackgroundType,
    RotationBin,
}

impl GroupBy {
    pub const ALL: &'static [GroupBy] =
        &[GroupBy::CarType, GroupBy::Background, GroupBy::ColorType, GroupBy::BackgroundType, GroupBy::RotationBin];

    pub fn title(self) -> &'static str {
        match self {
            GroupBy::CarType => "car type",
            GroupBy::Background => "background",
            GroupBy::ColorType => "color x car type",
            GroupBy::BackgroundType => "background x car type",
            GroupBy::RotationBin => "rotation bin",
        }
    }

    /// Groups a scene falls in, as `(sort order, label)`; a scene counts once per group.
    pub fn keys(self, scene: &SceneAttributes) -> Vec<(usize, String)> {
        let ti = |t: &CarType| index_of(CarType::ALL, t);
        let mut keys: Vec<(usize, String)> = match self {
            GroupBy::CarType => scene.cars.iter().map(|c| (ti(&c.car_type), c.car_type.to_string())).collect(),
            GroupBy::Background => {
                vec![(index_of(Background::ALL, &scene.background), scene.background.to_string())]
            }
            GroupBy::ColorType => scene
                .cars
                .iter()
                .map(|c| (ti(&c.car_type) * 100 + index_of(CarColor::ALL, &c.color), format!("{} {}", c.color, c.car_type)))
                .collect(),
            GroupBy::BackgroundType => scene
                .cars
                .iter()
                .map(|c| {
                    let bi = index_of(Background::ALL, &scene.background);
                    (bi * 100 + ti(&c.car_type), format!("{} {}", c.car_type, scene.background))
                })
                .collect(),
            GroupBy::RotationBin => scene
                .cars
                .iter()
                .map(|c| {
                    let b = rotation_bin(c.azimuth_deg);
                    (b, rotation_bin_label(b))
                })
                .collect(),
        };
        keys.sort();
        keys.dedup();
        keys
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub key: String,
    pub count: usize,
    /// Mean MMS per detector, `None` when that detector has no value in the group.
    pub means: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub title: String,
    pub detectors: Vec<String>,
    pub rows: Vec<GroupRow>,
}

/// Mean value per group. `values[d][s]` is detector `d`'s score on `scenes[s]`;
/// missing scores are skipped. Empty groups produce no row.
pub fn group_mms(group_by: GroupBy, scenes: &[SceneAttributes], detectors: &[String], values: &[Vec<Option<f64>>]) -> GroupReport {
    let mut acc: BTreeMap<(usize, String), (usize, Vec<(f64, usize)>)> = BTreeMap::new();
    for (s, scene) in scenes.iter().enumerate() {
        for key in group_by.keys(scene) {
            let entry = acc.entry(key).or_insert_with(|| (0, vec![(0.0, 0); detectors.len()]));
            entry.0 += 1;
            for (d, column) in values.iter().enumerate() {
                if let Some(v) = column.get(s).copied().flatten() {
                    entry.1[d].0 += v;
                    entry.1[d].1 += 1;
                }
            }
        }
    }
    let rows = acc
        .into_iter()
        .map(|((_, key), (count, sums))| GroupRow {
            key,
            count,
            means: sums.into_iter().map(|(sum, n)| (n > 0).then(|| sum / n as f64)).collect(),
        })
        .collect();
    GroupReport { title: group_by.title().to_string(), detectors: detectors.to_vec(), rows }
}

impl GroupReport {
    /// Detectors with the highest and lowest mean in a row, for highlighting.
    fn extrema(&self, row: &GroupRow) -> String {
        let present: Vec<(usize, f64)> = row.means.iter().enumerate().filter_map(|(i, m)| m.map(|v| (i, v))).collect();
        if present.len() < 2 {
            return String::new();
        }
        let worst = present.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        let best = present.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        format!("worst={} best={}", self.detectors[worst.0], self.detectors[best.0])
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["group".to_string(), "scenes".to_string()];
        header.extend(self.detectors.iter().cloned());
        header.push("extrema".into());
        w.write_record(&header).expect("in-memory csv");
        for row in &self.rows {
            let mut rec = vec![row.key.clone(), row.count.to_string()];
            rec.extend(row.means.iter().map(|m| m.map(|v| format!("{v:.4}")).unwrap_or_default()));
            rec.push(self.extrema(row));
            w.write_record(&rec).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
    }

    /// Aligned plain-text table, one row per group, one column per detector.
    pub fn to_text(&self) -> String {
        let mut table: Vec<Vec<String>> = Vec::with_capacity(self.rows.len() + 1);
        let mut header = vec![self.title.clone(), "n".into()];
        header.extend(self.detectors.iter().cloned());
        header.push(String::new());
        table.push(header);
        for row in &self.rows {
            let mut line = vec![row.key.clone(), row.count.to_string()];
            line.extend(row.means.iter().map(|m| m.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())));
            line.push(self.extrema(row));
            table.push(line);
        }
        let cols = table[0].len();
        let widths: Vec<usize> = (0..cols).map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for line in &table {
            let cells: Vec<String> = line
                .iter()
                .enumerate()
                .map(|(c, cell)| if c == 0 { format!("{cell:<w$}", w = widths[c]) } else { format!("{cell:>w$}", w = widths[c]) })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(id: &str, bg: Background, cars: &[(CarType, CarColor, f64)]) -> SceneAttributes {
        SceneAttributes {
            scene_id: id.into(),
            background: bg,
            cars: cars
                .iter()
                .map(|&(car_type, color, azimuth_deg)| CarAttributes { car_type, color, azimuth_deg, occlusion_rate: 0.0 })
                .collect(),
        }
    }

    #[test]
    fn bins() {
        assert_eq!(rotation_bin(0.0), 0);
        assert_eq!(rotation_bin(-19.999), 0);
        assert_eq!(rotation_bin(20.0), 1);
        assert_eq!(rotation_bin(180.0), 8);
        assert_eq!(rotation_bin(-170.0), 8);
        assert_eq!(rotation_bin_label(8), "[160,180]");
        assert!(is_side_view(-10.0) && is_side_view(170.0) && !is_side_view(10.5) && !is_side_view(169.9));
    }

    #[test]
    fn two_groups_arithmetic() {
        let scenes = vec![
            scene("a", Background::City, &[(CarType::Sedan, CarColor::Red, 0.0)]),
            scene("b", Background::City, &[(CarType::Sedan, CarColor::Red, 0.0)]),
            scene("c", Background::Forest, &[(CarType::Suv, CarColor::Red, 0.0)]),
        ];
        let r = group_mms(GroupBy::CarType, &scenes, &["d".into()], &[vec![Some(0.2), Some(0.4), Some(0.6)]]);
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.rows[0].key, "sedan");
        assert!((r.rows[0].means[0].unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(r.rows[1].means[0], Some(0.6));
    }

    #[test]
    fn scene_counts_once_per_group() {
        let scenes = vec![scene("a", Background::City, &[(CarType::Sedan, CarColor::Red, 5.0), (CarType::Sedan, CarColor::Blue, 30.0)])];
        let r = group_mms(GroupBy::CarType, &scenes, &["d".into()], &[vec![Some(0.5)]]);
        assert_eq!(r.rows, vec![GroupRow { key: "sedan".into(), count: 1, means: vec![Some(0.5)] }]);
        let r = group_mms(GroupBy::RotationBin, &scenes, &["d".into()], &[vec![Some(0.5)]]);
        assert_eq!(r.rows.iter().map(|r| r.key.as_str()).collect::<Vec<_>>(), ["[0,20)", "[20,40)"]);
    }

    #[test]
    fn renders_tables() {
        let scenes = vec![scene("a", Background::City, &[(CarType::Sedan, CarColor::Red, 0.0)])];
        let r = group_mms(GroupBy::ColorType, &scenes, &["x".into(), "y".into()], &[vec![Some(0.25)], vec![None]]);
        let csv = r.to_csv();
        assert_eq!(csv, "group,scenes,x,y,extrema\nred sedan,1,0.2500,,\n");
        let text = r.to_text();
        assert!(text.lines().nth(1).unwrap().starts_with("red sedan"));
        assert!(text.contains("0.250"));
    }
}
