//! Grid specifications for `sweep` and `control --grid`.
//!
//! - `linspace:START:END:COUNT`: scalar points from START to END inclusive
//! - `circle:RADIUS:COUNT`: planar points `RADIUS (cos t_k, sin t_k)`, `t_k = 2πk/COUNT`
//! - `a,b;c,d`: explicit points separated by `;`, coordinates by `,`

use metreg::spaces::Vector;

pub fn parse_vector(text: &str) -> Result<Vector, String> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("empty coordinate in {text:?}"));
    }
    let values = parts
        .iter()
        .map(|p| p.parse::<f64>().map_err(|e| format!("coordinate {p:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(format!("non-finite coordinate in {text:?}"));
    }
    Ok(Vector::from_vec(values))
}

fn number(field: &str, what: &str) -> Result<f64, String> {
    let v: f64 = field.trim().parse().map_err(|e| format!("{what} {field:?}: {e}"))?;
    if !v.is_finite() {
        return Err(format!("{what} must be finite"));
    }
    Ok(v)
}

fn count(field: &str) -> Result<usize, String> {
    field.trim().parse().map_err(|e| format!("count {field:?}: {e}"))
}

pub fn parse_grid(spec: &str) -> Result<Vec<Vector>, String> {
    let spec = spec.trim();
    if let Some(rest) = spec.strip_prefix("linspace:") {
        let f: Vec<&str> = rest.split(':').collect();
        let [s, e, c] = f.as_slice() else { return Err("linspace needs START:END:COUNT".into()) };
        let (s, e, c) = (number(s, "start")?, number(e, "end")?, count(c)?);
        return Ok(match c {
            0 => Vec::new(),
            1 => vec![Vector::from_element(1, s)],
            _ => (0..c).map(|i| Vector::from_element(1, s + (e - s) * i as f64 / (c - 1) as f64)).collect(),
        });
    }
    if let Some(rest) = spec.strip_prefix("circle:") {
        let f: Vec<&str> = rest.split(':').collect();
        let [r, c] = f.as_slice() else { return Err("circle needs RADIUS:COUNT".into()) };
        let (r, c) = (number(r, "radius")?, count(c)?);
        return Ok((0..c)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / c as f64;
                Vector::from_vec(vec![r * t.cos(), r * t.sin()])
            })
            .collect());
    }
    if spec.is_empty() {
        return Ok(Vec::new());
    }
    let points = spec.split(';').map(parse_vector).collect::<Result<Vec<_>, _>>()?;
    if points.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err("grid points have different dimensions".into());
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_forms() {
        let g = parse_grid("linspace:-1:1:5").unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g[1][0], -0.5);
        assert_eq!(parse_grid("linspace:0.2:9:1").unwrap()[0][0], 0.2);
        let c = parse_grid("circle:2:4").unwrap();
        assert_eq!(c.len(), 4);
        assert!((c[1][1] - 2.0).abs() < 1e-15 && c[1][0].abs() < 1e-15);
        let e = parse_grid("0.1,0; 0,0.1").unwrap();
        assert_eq!(e[1].as_slice(), &[0.0, 0.1]);
        assert!(parse_grid("").unwrap().is_empty());
        assert!(parse_grid("linspace:0:1:0").unwrap().is_empty());
        assert!(parse_grid("1,2;3").is_err());
        assert!(parse_grid("circle:1").is_err());
        assert!(parse_vector("1,,2").is_err());
        assert!(parse_vector("nan").is_err());
    }
}
