use std::collections::HashMap;
use std::path::Path;

use super::{read_text, write_all, IoError};
use crate::camera::CameraIntrinsics;

const KEYS: [&str; 6] = ["fx", "fy", "cx", "cy", "width", "height"];

/// `key = value` lines; blank lines and `#` comments are ignored.
pub fn parse_intrinsics(text: &str) -> Result<CameraIntrinsics, IoError> {
    let mut map: HashMap<&str, (usize, &str)> = HashMap::new();
    for (li, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| IoError::MalformedIntrinsics {
            line: li + 1,
            reason,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad("expected key=value".into()))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(bad(format!("unknown key '{k}'")));
        }
        if map.insert(k, (li + 1, v.trim())).is_some() {
            return Err(bad(format!("duplicate key '{k}'")));
        }
    }
    let get = |k: &str| {
        map.get(k)
            .copied()
            .ok_or_else(|| IoError::MissingKey(k.into()))
    };
    let float = |k: &str| -> Result<f64, IoError> {
        let (line, v) = get(k)?;
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => Err(IoError::MalformedIntrinsics {
                line,
                reason: format!("{k}: not a finite number: {v:?}"),
            }),
        }
    };
    let int = |k: &str| -> Result<u32, IoError> {
        let (line, v) = get(k)?;
        v.parse::<u32>().map_err(|_| IoError::MalformedIntrinsics {
            line,
            reason: format!("{k}: not an unsigned integer: {v:?}"),
        })
    };
    let (fx, fy, cx, cy) = (float("fx")?, float("fy")?, float("cx")?, float("cy")?);
    for (key, value) in [("fx", fx), ("fy", fy)] {
        if value <= 0.0 {
            return Err(IoError::NonPositiveFocal {
                key: key.into(),
                value,
            });
        }
    }
    let (width, height) = (int("width")?, int("height")?);
    CameraIntrinsics::new(fx, fy, cx, cy, width, height).map_err(|e| IoError::MalformedIntrinsics {
        line: 0,
        reason: e.to_string(),
    })
}

pub fn format_intrinsics(k: &CameraIntrinsics) -> String {
    format!(
        "fx = {:.16e}\nfy = {:.16e}\ncx = {:.16e}\ncy = {:.16e}\nwidth = {}\nheight = {}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height
    )
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics, IoError> {
    parse_intrinsics(&read_text(path)?)
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<(), IoError> {
    write_all(path, format_intrinsics(k).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str =
        "fx=500\nfy = 510.5\n# principal point\ncx=320\ncy=240\nwidth=640\nheight=480\n";

    #[test]
    fn complete_file() {
        let k = parse_intrinsics(FULL).unwrap();
        assert_eq!(
            k,
            CameraIntrinsics {
                fx: 500.0,
                fy: 510.5,
                cx: 320.0,
                cy: 240.0,
                width: 640,
                height: 480
            }
        );
    }

    #[test]
    fn missing_key() {
        let text = FULL.replace("fy = 510.5\n", "");
        assert!(matches!(parse_intrinsics(&text), Err(IoError::MissingKey(k)) if k == "fy"));
    }

    #[test]
    fn zero_focal() {
        let text = FULL.replace("fx=500", "fx=0");
        assert!(
            matches!(parse_intrinsics(&text), Err(IoError::NonPositiveFocal { value, .. }) if value == 0.0)
        );
    }

    #[test]
    fn malformed_lines() {
        assert!(matches!(
            parse_intrinsics("fx 500"),
            Err(IoError::MalformedIntrinsics { line: 1, .. })
        ));
        assert!(matches!(
            parse_intrinsics("fx=1\nfx=2"),
            Err(IoError::MalformedIntrinsics { line: 2, .. })
        ));
        let text = FULL.replace("width=640", "width=-3");
        assert!(matches!(
            parse_intrinsics(&text),
            Err(IoError::MalformedIntrinsics { line: 6, .. })
        ));
        assert!(matches!(
            parse_intrinsics("zoom=2"),
            Err(IoError::MalformedIntrinsics { .. })
        ));
    }

    #[test]
    fn round_trip() {
        let k = CameraIntrinsics::from_fov(63.7, 97, 41).unwrap();
        assert_eq!(parse_intrinsics(&format_intrinsics(&k)).unwrap(), k);
    }
}
