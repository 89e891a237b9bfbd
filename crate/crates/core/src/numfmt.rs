//! Fixed number formatting shared by reports: 12 significant digits, shortest
//! form, `-0` printed as `0`.

use crate::C64;

/// `x` rounded to 12 significant digits, in `%g` style.
pub fn real(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{:.11e}", x);
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    if digits.chars().all(|c| c == '0') {
        return "0".into();
    }
    let sign = if negative { "-" } else { "" };
    let body = if (-5..12).contains(&exp) {
        if exp >= 0 {
            let (int, frac) = digits.split_at(exp as usize + 1);
            let frac = frac.trim_end_matches('0');
            if frac.is_empty() {
                int.to_string()
            } else {
                format!("{int}.{frac}")
            }
        } else {
            let zeros = "0".repeat((-exp - 1) as usize);
            format!("0.{zeros}{}", digits.trim_end_matches('0'))
        }
    } else {
        let (lead, rest) = digits.split_at(1);
        let rest = rest.trim_end_matches('0');
        if rest.is_empty() {
            format!("{lead}e{exp}")
        } else {
            format!("{lead}.{rest}e{exp}")
        }
    };
    format!("{sign}{body}")
}

/// The value that [`real`] prints, as a number.
pub fn rounded(x: f64) -> f64 {
    let r: f64 = real(x).parse().unwrap_or(x);
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// `a`, `bi`, `a+bi` or `a-bi`, each part through [`real`].
pub fn complex(z: C64) -> String {
    let re = real(z.re);
    let im = real(z.im);
    match (re.as_str(), im.as_str()) {
        (_, "0") => re,
        ("0", _) => format!("{im}i"),
        _ if im.starts_with('-') => format!("{re}{im}i"),
        _ => format!("{re}+{im}i"),
    }
}
