//! Report rendering: markdown tables over evaluation reports and run
//! histories, plus PNG charts of per-slot metrics and training curves.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::training::EpochRecord;

const FONT_PATH: &str = "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf";

/// Charts carry titles, axis labels, and legends only when a usable
/// font is present; otherwise they degrade to bare geometry rather
/// than failing.
fn fonts_available() -> bool {
    static AVAILABLE: OnceLock<bool> = OnceLock::new();
    *AVAILABLE.get_or_init(|| {
        let Ok(bytes) = std::fs::read(FONT_PATH) else {
            return false;
        };
        let leaked: &'static [u8] = Box::leak(bytes.into_boxed_slice());
        plotters::style::register_font("sans-serif", FontStyle::Normal, leaked).is_ok()
    })
}

fn render_err(e: impl std::fmt::Display) -> Error {
    Error::Render(e.to_string())
}

/// Markdown tables: a cross-run summary, per-slot breakdowns, and a
/// training digest per run with a history.
pub fn render_markdown(
    reports: &[(String, EvalReport)],
    histories: &[(String, Vec<EpochRecord>)],
) -> String {
    let mut md = String::from("# Beam tracking evaluation\n");

    if !reports.is_empty() {
        md.push_str("\n## Summary\n\n");
        md.push_str("| run | ATop-1 | ATop-3 | ATop-5 | ADBA | samples | delta |\n");
        md.push_str("|---|---|---|---|---|---|---|\n");
        for (name, r) in reports {
            let _ = writeln!(
                md,
                "| {name} | {:.4} | {:.4} | {:.4} | {:.4} | {} | {} |",
                r.atop1, r.atop3, r.atop5, r.adba, r.n_samples, r.delta
            );
        }
        for (name, r) in reports {
            let _ = write!(md, "\n## Per-slot metrics: {name}\n\n");
            md.push_str("| slot | Top-1 | Top-3 | Top-5 | DBA |\n|---|---|---|---|---|\n");
            for (j, s) in r.per_slot.iter().enumerate() {
                let _ = writeln!(
                    md,
                    "| t+{j} | {:.4} | {:.4} | {:.4} | {:.4} |",
                    s.top1, s.top3, s.top5, s.dba
                );
            }
        }
    }

    if !histories.is_empty() {
        md.push_str("\n## Training runs\n\n");
        md.push_str("| run | epochs | best val loss | best epoch | final train loss |\n");
        md.push_str("|---|---|---|---|---|\n");
        for (name, h) in histories {
            if h.is_empty() {
                let _ = writeln!(md, "| {name} | 0 | - | - | - |");
                continue;
            }
            let best = h
                .iter()
                .min_by(|a, b| a.val_loss.partial_cmp(&b.val_loss).unwrap())
                .unwrap();
            let _ = writeln!(
                md,
                "| {name} | {} | {:.6} | {} | {:.6} |",
                h.len(),
                best.val_loss,
                best.epoch,
                h.last().unwrap().train_loss
            );
        }
    }
    md
}

fn series_color(i: usize) -> RGBColor {
    const PALETTE: [RGBColor; 6] = [
        RGBColor(31, 119, 180),
        RGBColor(214, 39, 40),
        RGBColor(44, 160, 44),
        RGBColor(148, 103, 189),
        RGBColor(255, 127, 14),
        RGBColor(23, 190, 207),
    ];
    PALETTE[i % PALETTE.len()]
}

/// Per-slot accuracy chart: one Top-1/Top-3/Top-5 trio per run, slot
/// index on the x axis.
pub fn plot_slot_accuracy(path: &Path, reports: &[(String, EvalReport)]) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Usage("nothing to plot".into()));
    }
    let slots = reports.iter().map(|(_, r)| r.per_slot.len()).max().unwrap();
    let with_text = fonts_available();

    let root = BitMapBackend::new(path, (900, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(render_err)?;
    let mut builder = ChartBuilder::on(&root);
    builder.margin(24).x_label_area_size(46).y_label_area_size(56);
    if with_text {
        builder.caption("Per-slot Top-K accuracy", ("sans-serif", 24));
    }
    let mut chart = builder
        .build_cartesian_2d(-0.25f64..(slots as f64 - 0.75), 0.0f64..1.05f64)
        .map_err(render_err)?;

    let mut mesh = chart.configure_mesh();
    if with_text {
        mesh.x_desc("prediction slot")
            .y_desc("accuracy")
            .x_labels(slots)
            .x_label_formatter(&|x| format!("t+{}", x.round() as i64));
    } else {
        mesh.disable_axes();
    }
    mesh.draw().map_err(render_err)?;

    for (i, (name, report)) in reports.iter().enumerate() {
        let color = series_color(i);
        for (k, pick, width) in [
            (1usize, &(|s: &crate::metrics::SlotMetrics| s.top1) as &dyn Fn(_) -> f64, 3u32),
            (3, &|s: &crate::metrics::SlotMetrics| s.top3, 2),
            (5, &|s: &crate::metrics::SlotMetrics| s.top5, 1),
        ] {
            let points: Vec<(f64, f64)> = report
                .per_slot
                .iter()
                .enumerate()
                .map(|(j, s)| (j as f64, pick(s)))
                .collect();
            let style = color.stroke_width(width);
            let series = chart
                .draw_series(LineSeries::new(points.clone(), style))
                .map_err(render_err)?;
            if with_text {
                series
                    .label(format!("{name} top-{k}"))
                    .legend(move |(x, y)| {
                        PathElement::new([(x, y), (x + 18, y)], color.stroke_width(width))
                    });
            }
            chart
                .draw_series(points.iter().map(|&(x, y)| Circle::new((x, y), 3, color.filled())))
                .map_err(render_err)?;
        }
    }
    if with_text {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .position(SeriesLabelPosition::LowerLeft)
            .draw()
            .map_err(render_err)?;
    }
    root.present().map_err(render_err)?;
    Ok(())
}

/// Per-slot DBA chart, one series per run.
pub fn plot_slot_dba(path: &Path, reports: &[(String, EvalReport)]) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Usage("nothing to plot".into()));
    }
    let slots = reports.iter().map(|(_, r)| r.per_slot.len()).max().unwrap();
    let with_text = fonts_available();

    let root = BitMapBackend::new(path, (900, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(render_err)?;
    let mut builder = ChartBuilder::on(&root);
    builder.margin(24).x_label_area_size(46).y_label_area_size(56);
    if with_text {
        builder.caption("Per-slot DBA", ("sans-serif", 24));
    }
    let mut chart = builder
        .build_cartesian_2d(-0.25f64..(slots as f64 - 0.75), 0.0f64..1.05f64)
        .map_err(render_err)?;

    let mut mesh = chart.configure_mesh();
    if with_text {
        mesh.x_desc("prediction slot")
            .y_desc("DBA")
            .x_labels(slots)
            .x_label_formatter(&|x| format!("t+{}", x.round() as i64));
    } else {
        mesh.disable_axes();
    }
    mesh.draw().map_err(render_err)?;

    for (i, (name, report)) in reports.iter().enumerate() {
        let color = series_color(i);
        let points: Vec<(f64, f64)> = report
            .per_slot
            .iter()
            .enumerate()
            .map(|(j, s)| (j as f64, s.dba))
            .collect();
        let series = chart
            .draw_series(LineSeries::new(points.clone(), color.stroke_width(2)))
            .map_err(render_err)?;
        if with_text {
            series.label(name.clone()).legend(move |(x, y)| {
                PathElement::new([(x, y), (x + 18, y)], color.stroke_width(2))
            });
        }
        chart
            .draw_series(points.iter().map(|&(x, y)| Circle::new((x, y), 3, color.filled())))
            .map_err(render_err)?;
    }
    if with_text {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .position(SeriesLabelPosition::LowerLeft)
            .draw()
            .map_err(render_err)?;
    }
    root.present().map_err(render_err)?;
    Ok(())
}

/// Training/validation loss curves, one pair of series per run.
pub fn plot_training_curves(path: &Path, histories: &[(String, Vec<EpochRecord>)]) -> Result<()> {
    if histories.iter().all(|(_, h)| h.is_empty()) {
        return Err(Error::Usage("no epochs to plot".into()));
    }
    let max_epoch = histories
        .iter()
        .flat_map(|(_, h)| h.iter().map(|r| r.epoch))
        .max()
        .unwrap();
    let max_loss = histories
        .iter()
        .flat_map(|(_, h)| h.iter().flat_map(|r| [r.train_loss, r.val_loss]))
        .fold(0.0f64, f64::max);
    let with_text = fonts_available();

    let root = BitMapBackend::new(path, (900, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(render_err)?;
    let mut builder = ChartBuilder::on(&root);
    builder.margin(24).x_label_area_size(46).y_label_area_size(64);
    if with_text {
        builder.caption("Training curves", ("sans-serif", 24));
    }
    let mut chart = builder
        .build_cartesian_2d(0.0f64..(max_epoch as f64 + 1.0), 0.0f64..(max_loss * 1.1).max(1e-9))
        .map_err(render_err)?;

    let mut mesh = chart.configure_mesh();
    if with_text {
        mesh.x_desc("epoch").y_desc("loss");
    } else {
        mesh.disable_axes();
    }
    mesh.draw().map_err(render_err)?;

    for (i, (name, history)) in histories.iter().enumerate() {
        if history.is_empty() {
            continue;
        }
        let color = series_color(i);
        let train: Vec<(f64, f64)> =
            history.iter().map(|r| (r.epoch as f64, r.train_loss)).collect();
        let val: Vec<(f64, f64)> = history.iter().map(|r| (r.epoch as f64, r.val_loss)).collect();
        let solid = chart
            .draw_series(LineSeries::new(train, color.stroke_width(2)))
            .map_err(render_err)?;
        if with_text {
            solid.label(format!("{name} train")).legend(move |(x, y)| {
                PathElement::new([(x, y), (x + 18, y)], color.stroke_width(2))
            });
        }
        let dashed = chart
            .draw_series(DashedLineSeries::new(
                val.into_iter(),
                6,
                4,
                color.stroke_width(2),
            ))
            .map_err(render_err)?;
        if with_text {
            dashed.label(format!("{name} val")).legend(move |(x, y)| {
                PathElement::new([(x, y), (x + 18, y)], color.stroke_width(1))
            });
        }
    }
    if with_text {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .draw()
            .map_err(render_err)?;
    }
    root.present().map_err(render_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::SlotMetrics;

    fn sample_report(offset: f64) -> EvalReport {
        let per_slot: Vec<SlotMetrics> = (0..4)
            .map(|j| {
                let base = (0.95 - 0.05 * j as f64 - offset).clamp(0.0, 1.0);
                SlotMetrics {
                    top1: base,
                    top3: (base + 0.03).min(1.0),
                    top5: (base + 0.05).min(1.0),
                    dba: (base + 0.04).min(1.0),
                }
            })
            .collect();
        let mean = |f: &dyn Fn(&SlotMetrics) -> f64| {
            per_slot.iter().map(|s| f(s)).sum::<f64>() / per_slot.len() as f64
        };
        EvalReport {
            atop1: mean(&|s| s.top1),
            atop3: mean(&|s| s.top3),
            atop5: mean(&|s| s.top5),
            adba: mean(&|s| s.dba),
            n_samples: 96,
            delta: 5.0,
            per_slot,
        }
    }

    fn sample_history() -> Vec<EpochRecord> {
        (0..12)
            .map(|e| EpochRecord {
                epoch: e,
                train_loss: 2.0 / (e as f64 + 1.0),
                val_loss: 2.2 / (e as f64 + 1.0),
                lr: 1e-4,
                wall_seconds: 1.0,
            })
            .collect()
    }

    #[test]
    fn markdown_contains_summary_and_slots() {
        let reports = vec![
            ("teacher".to_string(), sample_report(0.0)),
            ("student".to_string(), sample_report(0.1)),
        ];
        let histories = vec![("teacher".to_string(), sample_history())];
        let md = render_markdown(&reports, &histories);
        assert!(md.contains("| run | ATop-1 |"));
        assert!(md.contains("| teacher |"));
        assert!(md.contains("| student |"));
        assert!(md.contains("Per-slot metrics: teacher"));
        assert!(md.contains("| t+3 |"));
        assert!(md.contains("Training runs"));
        let expected_atop1 = format!("{:.4}", sample_report(0.0).atop1);
        assert!(md.contains(&expected_atop1));
    }

    #[test]
    fn markdown_without_histories_skips_training_section() {
        let reports = vec![("only".to_string(), sample_report(0.0))];
        let md = render_markdown(&reports, &[]);
        assert!(!md.contains("Training runs"));
    }

    fn assert_png(path: &Path) {
        let bytes = std::fs::read(path).unwrap();
        assert!(bytes.len() > 1000, "suspiciously small image: {} bytes", bytes.len());
        assert_eq!(&bytes[..8], &[0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a]);
    }

    #[test]
    fn charts_render_to_valid_pngs() {
        let dir = tempfile::tempdir().unwrap();
        let reports = vec![
            ("teacher".to_string(), sample_report(0.0)),
            ("student".to_string(), sample_report(0.12)),
        ];
        let histories = vec![
            ("teacher".to_string(), sample_history()),
            ("student".to_string(), sample_history()),
        ];

        let acc = dir.path().join("acc.png");
        plot_slot_accuracy(&acc, &reports).unwrap();
        assert_png(&acc);

        let dba = dir.path().join("dba.png");
        plot_slot_dba(&dba, &reports).unwrap();
        assert_png(&dba);

        let curves = dir.path().join("curves.png");
        plot_training_curves(&curves, &histories).unwrap();
        assert_png(&curves);
    }

    #[test]
    fn empty_inputs_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        assert!(matches!(plot_slot_accuracy(&p, &[]), Err(Error::Usage(_))));
        assert!(matches!(plot_slot_dba(&p, &[]), Err(Error::Usage(_))));
        assert!(matches!(plot_training_curves(&p, &[]), Err(Error::Usage(_))));
    }
}
