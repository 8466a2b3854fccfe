//! Print the bundled published results and flag rows whose listed
//! sensitivities do not average to the reported CPM.

use macnn::evaluation::{reference_tables, OPERATING_POINTS};

fn main() {
    let header: Vec<String> = OPERATING_POINTS.iter().map(|f| format!("{f:>6}")).collect();
    println!("{:<12} {:<12} {}    cpm  mean", "dataset", "method", header.join(" "));
    for row in reference_tables() {
        let cells = match row.sensitivities {
            Some(s) => s.iter().map(|v| format!("{v:>6.3}")).collect::<Vec<_>>().join(" "),
            None => format!("{:>48}", "-"),
        };
        let reported = row.reported_cpm.map_or("   -".into(), |c| format!("{c:.2}"));
        let mean = row.row_cpm().map_or("    -".into(), |c| format!("{c:.3}"));
        let flag = if row.is_flagged() { "  (!)" } else { "" };
        println!("{:<12} {:<12} {cells}   {reported} {mean}{flag}", row.dataset, row.method);
    }
}
