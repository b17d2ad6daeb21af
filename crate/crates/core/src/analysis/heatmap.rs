use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::reconstruct::{ApplicationProfile, CostConstants};

/// Columns: `[0,10)`, `[10,100)`, ..., `[10^10,10^11)`, `[10^11,inf)`.
pub const DECADE_BUCKETS: usize = 12;
pub const NESTING_GROUP_WIDTH: usize = 10;

/// Column index of a cycle count. Powers of ten up to 10^11 are exact in f64.
pub fn decade_bucket(cycles: f64) -> usize {
    let mut bucket = 0;
    let mut edge = 10.0;
    while bucket + 1 < DECADE_BUCKETS && cycles >= edge {
        bucket += 1;
        edge *= 10.0;
    }
    bucket
}

/// Span counts and compensated cycles by nesting group (rows) and cycle decade (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMatrix {
    /// Lower edge of each cycle bucket; the last one is open-ended.
    pub cycle_bucket_edges: Vec<f64>,
    /// First nesting level of each group; every group spans `NESTING_GROUP_WIDTH` levels.
    pub nesting_group_starts: Vec<usize>,
    pub cell_counts: Vec<Vec<u64>>,
    pub cell_cycles: Vec<Vec<f64>>,
}

impl HeatmapMatrix {
    fn empty() -> Self {
        HeatmapMatrix {
            cycle_bucket_edges: std::iter::once(0.0).chain((1..DECADE_BUCKETS as i32).map(|d| 10f64.powi(d))).collect(),
            nesting_group_starts: Vec::new(),
            cell_counts: Vec::new(),
            cell_cycles: Vec::new(),
        }
    }

    fn add(&mut self, nesting_level: usize, cycles: f64) {
        let row = nesting_level / NESTING_GROUP_WIDTH;
        while self.cell_counts.len() <= row {
            self.nesting_group_starts.push(self.cell_counts.len() * NESTING_GROUP_WIDTH);
            self.cell_counts.push(vec![0; DECADE_BUCKETS]);
            self.cell_cycles.push(vec![0.0; DECADE_BUCKETS]);
        }
        let col = decade_bucket(cycles);
        self.cell_counts[row][col] += 1;
        self.cell_cycles[row][col] += cycles;
    }

    pub fn total_count(&self) -> u64 {
        self.cell_counts.iter().flatten().sum()
    }

    pub fn total_cycles(&self) -> f64 {
        self.cell_cycles.iter().flatten().sum()
    }

    /// Number of nesting groups with at least one span.
    pub fn occupied_groups(&self) -> usize {
        self.cell_counts.iter().filter(|row| row.iter().any(|&c| c > 0)).count()
    }

    fn column_label(&self, col: usize) -> String {
        format!("{}", self.cycle_bucket_edges[col])
    }

    fn row_label(&self, row: usize) -> String {
        let start = self.nesting_group_starts[row];
        format!("{}-{}", start, start + NESTING_GROUP_WIDTH - 1)
    }

    /// Header row of bucket lower edges, then one row per nesting group with
    /// `count:cycles` cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("nesting");
        for col in 0..DECADE_BUCKETS {
            out.push(',');
            out.push_str(&self.column_label(col));
        }
        out.push('\n');
        for row in 0..self.cell_counts.len() {
            out.push_str(&self.row_label(row));
            for col in 0..DECADE_BUCKETS {
                write!(out, ",{}:{}", self.cell_counts[row][col], self.cell_cycles[row][col]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Standalone SVG; darker cells hold more total cycles (log scale).
    pub fn to_svg(&self) -> String {
        const CELL_W: usize = 64;
        const CELL_H: usize = 28;
        const LEFT: usize = 70;
        const TOP: usize = 30;
        let rows = self.cell_counts.len();
        let width = LEFT + CELL_W * DECADE_BUCKETS + 10;
        let height = TOP + CELL_H * rows + 40;
        let max = self.cell_cycles.iter().flatten().fold(0.0f64, |m, &c| m.max(c));
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"10\">\n"
        );
        writeln!(svg, "<text x=\"{LEFT}\" y=\"14\">compensated cycles (decade lower edge) by nesting group</text>").unwrap();
        for row in 0..rows {
            let y = TOP + row * CELL_H;
            writeln!(svg, "<text x=\"4\" y=\"{}\">{}</text>", y + CELL_H / 2 + 4, self.row_label(row)).unwrap();
            for col in 0..DECADE_BUCKETS {
                let cycles = self.cell_cycles[row][col];
                let darkness = if max > 0.0 && cycles > 0.0 { (1.0 + cycles).ln() / (1.0 + max).ln() } else { 0.0 };
                let level = (255.0 * (1.0 - darkness)).round() as u8;
                writeln!(
                    svg,
                    "<rect x=\"{}\" y=\"{y}\" width=\"{CELL_W}\" height=\"{CELL_H}\" fill=\"rgb({level},{level},{level})\" stroke=\"#999\"><title>{} spans, {} cycles</title></rect>",
                    LEFT + col * CELL_W,
                    self.cell_counts[row][col],
                    cycles
                )
                .unwrap();
            }
        }
        let label_y = TOP + rows * CELL_H + 16;
        for col in 0..DECADE_BUCKETS {
            let label = if col == 0 { "0".to_string() } else { format!("1e{col}") };
            writeln!(svg, "<text x=\"{}\" y=\"{label_y}\">{label}</text>", LEFT + col * CELL_W + 4).unwrap();
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Buckets every complete span by nesting level and compensated cycles.
pub fn build_heatmap(profile: &ApplicationProfile, costs: &CostConstants) -> HeatmapMatrix {
    let mut m = HeatmapMatrix::empty();
    for (_, span) in profile.spans() {
        m.add(span.nesting_level.max(0) as usize, span.compensated_cycles(costs).cycles);
    }
    m
}
