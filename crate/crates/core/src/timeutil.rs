//! Civil-date arithmetic on Unix timestamps, all in UTC.
//!
//! Hand-rolled (Gregorian cycle arithmetic) so that year extraction and
//! calendar-month windows stay dependency-free and bit-reproducible.

use crate::error::{Error, Result};

pub const SECS_PER_DAY: i64 = 86_400;

/// Days since 1970-01-01 for a civil date. Valid for all proleptic
/// Gregorian dates.
pub fn days_from_civil(year: i64, month: u32, day: u32) -> i64 {
    let y = if month <= 2 { year - 1 } else { year };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = if month > 2 { month - 3 } else { month + 9 } as i64;
    let doy = (153 * mp + 2) / 5 + day as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

/// Inverse of [`days_from_civil`].
pub fn civil_from_days(days: i64) -> (i64, u32, u32) {
    let z = days + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let month = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if month <= 2 { y + 1 } else { y }, month, day)
}

/// Calendar year (UTC) containing the timestamp.
pub fn year_of(ts: i64) -> i64 {
    civil_from_days(ts.div_euclid(SECS_PER_DAY)).0
}

fn days_in_month(year: i64, month: u32) -> u32 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 => {
            if (year % 4 == 0 && year % 100 != 0) || year % 400 == 0 {
                29
            } else {
                28
            }
        }
        _ => unreachable!("month out of range"),
    }
}

/// Timestamp `months` calendar months before `ts`, clamping the day of
/// month (e.g. Mar 31 minus one month is Feb 28/29).
pub fn minus_months(ts: i64, months: i64) -> i64 {
    let days = ts.div_euclid(SECS_PER_DAY);
    let sod = ts.rem_euclid(SECS_PER_DAY);
    let (y, m, d) = civil_from_days(days);
    let total = y * 12 + (m as i64 - 1) - months;
    let ny = total.div_euclid(12);
    let nm = (total.rem_euclid(12) + 1) as u32;
    let nd = d.min(days_in_month(ny, nm));
    days_from_civil(ny, nm, nd) * SECS_PER_DAY + sod
}

/// Parse a timestamp field: integer epoch seconds, `YYYY-MM-DD`, or
/// `YYYY-MM-DD[T ]HH:MM:SS` with an optional trailing `Z`.
pub fn parse_timestamp(raw: &str) -> Result<i64> {
    let s = raw.trim();
    if s.is_empty() {
        return Err(Error::BadTimestamp(raw.to_string()));
    }
    if let Ok(epoch) = s.parse::<i64>() {
        return Ok(epoch);
    }
    let s = s.strip_suffix('Z').unwrap_or(s);
    let (date, time) = match s.split_once(['T', ' ']) {
        Some((d, t)) => (d, Some(t)),
        None => (s, None),
    };
    let mut parts = date.split('-');
    let year: i64 = next_num(&mut parts, raw)?;
    let month: u32 = next_num(&mut parts, raw)?;
    let day: u32 = next_num(&mut parts, raw)?;
    if parts.next().is_some() || !(1..=12).contains(&month) || day < 1 || day > days_in_month(year, month) {
        return Err(Error::BadTimestamp(raw.to_string()));
    }
    let mut secs = days_from_civil(year, month, day) * SECS_PER_DAY;
    if let Some(t) = time {
        let mut hms = t.split(':');
        let h: i64 = next_num(&mut hms, raw)?;
        let m: i64 = next_num(&mut hms, raw)?;
        let sec: i64 = match hms.next() {
            Some(v) => v.parse().map_err(|_| Error::BadTimestamp(raw.to_string()))?,
            None => 0,
        };
        if hms.next().is_some() || h > 23 || m > 59 || sec > 60 {
            return Err(Error::BadTimestamp(raw.to_string()));
        }
        secs += h * 3600 + m * 60 + sec;
    }
    Ok(secs)
}

fn next_num<'a, T: std::str::FromStr>(
    parts: &mut impl Iterator<Item = &'a str>,
    raw: &str,
) -> Result<T> {
    parts
        .next()
        .and_then(|p| p.parse().ok())
        .ok_or_else(|| Error::BadTimestamp(raw.to_string()))
}

/// Parse a window width like `90s`, `12h`, `1d`, `2w`, `6mo`, `0.5y` into
/// seconds. Months are the 30.44-day average month, years 365.25 days.
pub fn parse_width(raw: &str) -> Result<i64> {
    let s = raw.trim();
    let split = s
        .char_indices()
        .find(|(_, c)| !c.is_ascii_digit() && *c != '.')
        .map(|(i, _)| i)
        .unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let value: f64 = num
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad width `{raw}`")))?;
    let unit_secs = match unit.trim() {
        "s" | "" => 1.0,
        "h" => 3600.0,
        "d" => 86_400.0,
        "w" => 604_800.0,
        "mo" => 2_630_016.0, // 30.44 days
        "y" => 31_557_600.0, // 365.25 days
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown width unit `{other}` in `{raw}`"
            )))
        }
    };
    let secs = (value * unit_secs).round() as i64;
    if secs <= 0 {
        return Err(Error::InvalidWindowWidth);
    }
    Ok(secs)
}
