//! SVG plots from the CSVs a run leaves behind.

use crate::error::{Error, Result};
use plotters::prelude::*;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default)]
pub struct PlotOutcome {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

struct Csv {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Csv { headers, rows })
    }

    fn column(&self, file: &str, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| Error::Config {
            field: format!("{file}:{name}"),
            reason: "missing column".into(),
        })
    }
}

fn num(s: &str) -> f64 {
    s.trim().parse().unwrap_or(f64::NAN)
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Writes `svg` with a `<metadata>` element naming its source CSV.
fn save(path: &Path, svg: String, source: &str) -> Result<()> {
    let tag = format!("<metadata>source: {source}</metadata>");
    let out = match svg.find("<svg").and_then(|i| svg[i..].find('>').map(|j| i + j + 1)) {
        Some(k) => format!("{}\n{tag}{}", &svg[..k], &svg[k..]),
        None => svg,
    };
    std::fs::write(path, out)?;
    Ok(())
}

fn log_range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite() && *v > 0.0)
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    (hi > 0.0).then(|| (lo / 1.5, hi * 1.5))
}

const PALETTE: [RGBColor; 6] = [BLUE, RED, GREEN, MAGENTA, CYAN, BLACK];

type Series = BTreeMap<String, Vec<(f64, f64)>>;

fn draw_loglog(title: &str, series: &Series, dashed: &Series, horizontal: Option<f64>) -> Result<Option<String>> {
    let all = || series.values().chain(dashed.values()).flatten();
    let (Some(xr), Some(yr)) = (
        log_range(all().map(|p| p.0)),
        log_range(all().map(|p| p.1).chain(horizontal)),
    ) else {
        return Ok(None);
    };
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (800, 560)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(70)
            .build_cartesian_2d((xr.0..xr.1).log_scale(), (yr.0..yr.1).log_scale())
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("t").draw().map_err(plot_err)?;
        for (i, (name, pts)) in series.iter().enumerate() {
            let c = PALETTE[i % PALETTE.len()];
            let pts: Vec<_> = pts.iter().copied().filter(|p| p.0 > 0.0 && p.1 > 0.0).collect();
            chart
                .draw_series(LineSeries::new(pts.clone(), c.stroke_width(2)))
                .map_err(plot_err)?
                .label(name.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], c));
            chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, c.filled()))).map_err(plot_err)?;
        }
        for (i, (_, pts)) in dashed.iter().enumerate() {
            let c = PALETTE[i % PALETTE.len()].mix(0.5);
            let pts: Vec<_> = pts.iter().copied().filter(|p| p.0 > 0.0 && p.1 > 0.0 && p.1.is_finite()).collect();
            chart.draw_series(DashedLineSeries::new(pts, 6, 4, c.stroke_width(1))).map_err(plot_err)?;
        }
        if let Some(h) = horizontal {
            chart
                .draw_series(LineSeries::new(vec![(xr.0, h), (xr.1, h)], BLACK.stroke_width(1)))
                .map_err(plot_err)?
                .label("ceiling C")
                .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], BLACK));
        }
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(Some(svg))
}

fn constant(dir: &Path, name: &str) -> Option<f64> {
    let t = Csv::read(&dir.join("constants.csv")).ok()?;
    t.rows.iter().find(|r| r.first().map(String::as_str) == Some(name)).and_then(|r| r.get(1)).map(|v| num(v))
}

fn gamma_plot(dir: &Path, out: &mut PlotOutcome) -> Result<()> {
    let t = Csv::read(&dir.join("gamma.csv"))?;
    let (ip, ig) = (t.column("gamma.csv", "p")?, t.column("gamma.csv", "gamma_p")?);
    let pts: Vec<(f64, f64)> = t.rows.iter().map(|r| (num(&r[ip]), num(&r[ig]))).filter(|p| p.1 > 0.0).collect();
    if pts.is_empty() {
        out.warnings.push("gamma.csv has no rows; no gamma plot".into());
        return Ok(());
    }
    let b_sup = constant(dir, "b_sup").filter(|b| b.is_finite() && *b > 0.0);
    let mut series = Series::new();
    series.insert("gamma_p".into(), pts.clone());
    let mut dashed = Series::new();
    let envelope_b = b_sup.unwrap_or(1.0 / (4.0 * std::f64::consts::PI));
    dashed.insert(
        "16 pi b* / (p+1)".into(),
        pts.iter().map(|&(p, _)| (p, (16.0 * std::f64::consts::PI * envelope_b / (p + 1.0)).min(1.0))).collect(),
    );
    let mut svg = String::new();
    {
        let pr = (pts[0].0.min(1.0), pts.last().unwrap().0.max(2.0));
        let root = SVGBackend::with_string(&mut svg, (800, 560)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("gamma_p with the bounded-kernel curve", ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(pr.0..pr.1, 0.0..1.05)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("p").draw().map_err(plot_err)?;
        chart
            .draw_series(LineSeries::new(pts.clone(), BLUE.stroke_width(2)))
            .map_err(plot_err)?
            .label("gamma_p")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], BLUE));
        let curve = dashed.into_values().next().unwrap();
        chart
            .draw_series(DashedLineSeries::new(curve, 6, 4, RED.stroke_width(1)))
            .map_err(plot_err)?
            .label("min{1, 16 pi b*/(p+1)}")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], RED));
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    let path = dir.join("gamma.svg");
    save(&path, svg, "gamma.csv")?;
    out.files.push(path);
    Ok(())
}

/// Plots whatever the directory holds: `gamma.svg` from gamma.csv, and
/// `moments.svg` and `exp_moment.svg` from trajectory.csv (with envelope.csv
/// and the ceiling from constants.csv when present).
pub fn emit_plots(dir: impl AsRef<Path>) -> Result<PlotOutcome> {
    let dir = dir.as_ref();
    let mut out = PlotOutcome::default();
    if dir.join("gamma.csv").exists() {
        gamma_plot(dir, &mut out)?;
    }
    let traj_path = dir.join("trajectory.csv");
    if !traj_path.exists() {
        if out.files.is_empty() {
            out.warnings.push("no trajectory.csv or gamma.csv; nothing to plot".into());
        }
        return Ok(out);
    }
    let t = Csv::read(&traj_path)?;
    let (it, io, ie) = (
        t.column("trajectory.csv", "time")?,
        t.column("trajectory.csv", "order")?,
        t.column("trajectory.csv", "estimate")?,
    );
    if t.rows.is_empty() {
        out.warnings.push("trajectory.csv is empty; no moment plots".into());
        return Ok(out);
    }
    let mut moments = Series::new();
    let mut exp = Series::new();
    for r in &t.rows {
        let (time, value) = (num(&r[it]), num(&r[ie]));
        let order = r[io].as_str();
        if order.starts_with('E') {
            exp.entry(order.to_string()).or_default().push((time, value));
        } else {
            let o = num(order);
            // every other even order keeps the figure legible
            if o > 0.0 && (o.fract() != 0.0 || (o as usize) % 4 == 0 || o == 2.0) {
                moments.entry(format!("m_{o}")).or_default().push((time, value));
            }
        }
    }
    let mut envelope = Series::new();
    if let (Ok(env), Some(s)) = (Csv::read(&dir.join("envelope.csv")), constant(dir, "s")) {
        let (et, ep, em) = (env.column("envelope.csv", "t")?, env.column("envelope.csv", "p")?, env.column("envelope.csv", "M_p")?);
        for r in &env.rows {
            let key = format!("m_{}", s * num(&r[ep]));
            if moments.contains_key(&key) {
                envelope.entry(key).or_default().push((num(&r[et]), num(&r[em])));
            }
        }
    }
    if let Some(svg) = draw_loglog("moments (solid) and envelopes (dashed)", &moments, &envelope, None)? {
        let path = dir.join("moments.svg");
        save(&path, svg, "trajectory.csv")?;
        out.files.push(path);
    }
    if !exp.is_empty() {
        let ceiling = constant(dir, "c_bound");
        if let Some(svg) = draw_loglog("exponential moment and its ceiling", &exp, &Series::new(), ceiling)? {
            let path = dir.join("exp_moment.svg");
            save(&path, svg, "trajectory.csv")?;
            out.files.push(path);
        }
    }
    Ok(out)
}
