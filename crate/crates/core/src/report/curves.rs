use std::path::{Path, PathBuf};

use plotters::prelude::*;
use plotters::style::FontStyle;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::training::EpochRecord;

pub const LOSS_CURVE: &str = "loss_vs_epoch";
pub const ACCURACY_CURVE: &str = "accuracy_vs_epoch";

const WIDTH: u32 = 800;
const HEIGHT: u32 = 500;
const FONT: &[u8] = include_bytes!("../../assets/fonts/DejaVuSansMono.ttf");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CurveFiles {
    pub loss_png: PathBuf,
    pub loss_csv: PathBuf,
    pub accuracy_png: PathBuf,
    pub accuracy_csv: PathBuf,
}

#[derive(Serialize)]
struct LossPoint {
    epoch: usize,
    train_loss: f64,
    val_loss: f64,
}

#[derive(Serialize)]
struct AccuracyPoint {
    epoch: usize,
    train_acc: f64,
    val_acc: f64,
}

fn register_font() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| {
        // only fails on malformed font bytes, which are vendored
        let _ = plotters::style::register_font("sans-serif", FontStyle::Normal, FONT);
    });
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

struct Series<'a> {
    title: &'a str,
    y_label: &'a str,
    train: Vec<(f64, f64)>,
    val: Vec<(f64, f64)>,
}

fn draw_png(s: &Series<'_>) -> Result<Vec<u8>> {
    register_font();
    let mut rgb = vec![0u8; (WIDTH * HEIGHT * 3) as usize];
    {
        let root = BitMapBackend::with_buffer(&mut rgb, (WIDTH, HEIGHT)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let (x0, x1) = s.train.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.0), hi.max(p.0))
        });
        let (y0, y1) = s
            .train
            .iter()
            .chain(&s.val)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.1), hi.max(p.1))
            });
        let pad = ((y1 - y0) * 0.05).max(0.05);
        let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };
        let mut chart = ChartBuilder::on(&root)
            .caption(s.title, ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("Epoch")
            .y_desc(s.y_label)
            .draw()
            .map_err(plot_err)?;
        for (name, pts, color) in [("train", &s.train, BLUE), ("validation", &s.val, RED)] {
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(name)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    let img = image::RgbImage::from_raw(WIDTH, HEIGHT, rgb).expect("buffer sized for the canvas");
    let mut png = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
        .map_err(plot_err)?;
    Ok(png)
}

fn csv_bytes<S: Serialize>(rows: &[S]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(plot_err)?;
    }
    w.into_inner().map_err(plot_err)
}

/// Writes the loss and accuracy curves as PNG plus a CSV of exactly the
/// plotted points.
pub fn render_curves(records: &[EpochRecord], out_dir: &Path) -> Result<CurveFiles> {
    if records.is_empty() {
        return Err(Error::InsufficientHistory { needed: 1, got: 0 });
    }
    let x = |r: &EpochRecord| r.epoch as f64;
    let loss = Series {
        title: "Classification Loss vs Epoch",
        y_label: "Loss",
        train: records.iter().map(|r| (x(r), r.train_loss)).collect(),
        val: records.iter().map(|r| (x(r), r.val_loss)).collect(),
    };
    let acc = Series {
        title: "Classification Accuracy vs Epoch",
        y_label: "Accuracy",
        train: records.iter().map(|r| (x(r), r.train_accuracy)).collect(),
        val: records.iter().map(|r| (x(r), r.val_accuracy)).collect(),
    };
    let loss_rows: Vec<LossPoint> = records
        .iter()
        .map(|r| LossPoint {
            epoch: r.epoch,
            train_loss: r.train_loss,
            val_loss: r.val_loss,
        })
        .collect();
    let acc_rows: Vec<AccuracyPoint> = records
        .iter()
        .map(|r| AccuracyPoint {
            epoch: r.epoch,
            train_acc: r.train_accuracy,
            val_acc: r.val_accuracy,
        })
        .collect();

    let files = CurveFiles {
        loss_png: out_dir.join(format!("{LOSS_CURVE}.png")),
        loss_csv: out_dir.join(format!("{LOSS_CURVE}.csv")),
        accuracy_png: out_dir.join(format!("{ACCURACY_CURVE}.png")),
        accuracy_csv: out_dir.join(format!("{ACCURACY_CURVE}.csv")),
    };
    write_atomic(&files.loss_png, &draw_png(&loss)?)?;
    write_atomic(&files.loss_csv, &csv_bytes(&loss_rows)?)?;
    write_atomic(&files.accuracy_png, &draw_png(&acc)?)?;
    write_atomic(&files.accuracy_csv, &csv_bytes(&acc_rows)?)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::reference_epochs;

    #[test]
    fn sidecars_hold_the_records_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let recs = reference_epochs();
        let files = render_curves(&recs, dir.path()).unwrap();
        let mut rdr = csv::Reader::from_path(&files.loss_csv).unwrap();
        assert_eq!(
            rdr.headers().unwrap().iter().collect::<Vec<_>>(),
            vec!["epoch", "train_loss", "val_loss"]
        );
        let rows: Vec<(usize, f64, f64)> = rdr.deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), recs.len());
        for (row, r) in rows.iter().zip(&recs) {
            assert_eq!(*row, (r.epoch, r.train_loss, r.val_loss));
        }
        assert_eq!(rows.first().unwrap().1, 1.4701);
        assert_eq!(rows.last().unwrap().2, 0.4432);
        let png = image::open(&files.accuracy_png).unwrap();
        assert_eq!((png.width(), png.height()), (WIDTH, HEIGHT));
    }

    #[test]
    fn constant_run_plots() {
        let dir = tempfile::tempdir().unwrap();
        let recs: Vec<EpochRecord> = (1..=3)
            .map(|e| EpochRecord {
                epoch: e,
                train_loss: 0.5,
                val_loss: 0.5,
                train_accuracy: 0.5,
                val_accuracy: 0.5,
                ..Default::default()
            })
            .collect();
        let files = render_curves(&recs, dir.path()).unwrap();
        let text = std::fs::read_to_string(files.accuracy_csv).unwrap();
        assert_eq!(text, "epoch,train_acc,val_acc\n1,0.5,0.5\n2,0.5,0.5\n3,0.5,0.5\n");
    }
}
