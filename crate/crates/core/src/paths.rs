//! Catalogue of message paths between road users.

use std::fmt;

use serde::Serialize;

use crate::latency::LinkTech;

/// What sits between the uplink and the downlink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Internetworking {
    #[serde(rename = "A-RSU")]
    Arsu,
    #[serde(rename = "A-RSU -> Cellular Cloud")]
    ArsuThenCloud,
    #[serde(rename = "Cellular Cloud -> A-RSU")]
    CloudThenArsu,
    #[serde(rename = "Cellular Cloud")]
    Cloud,
}

impl Internetworking {
    pub fn label(self) -> &'static str {
        match self {
            Internetworking::Arsu => "A-RSU",
            Internetworking::ArsuThenCloud => "A-RSU -> Cellular Cloud",
            Internetworking::CloudThenArsu => "Cellular Cloud -> A-RSU",
            Internetworking::Cloud => "Cellular Cloud",
        }
    }
}

/// One of the ten heterogeneous intercommunication scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HeteroPath {
    pub number: u8,
    pub uplink: LinkTech,
    pub via: Internetworking,
    pub downlink: LinkTech,
    /// Index into the delay matrix rows holding this bundle's delay.
    pub delay_row: usize,
    /// True when the delay row lists the bundle in the opposite direction.
    pub mirrored: bool,
}

const fn path(
    number: u8,
    uplink: LinkTech,
    via: Internetworking,
    downlink: LinkTech,
    delay_row: usize,
    mirrored: bool,
) -> HeteroPath {
    HeteroPath {
        number,
        uplink,
        via,
        downlink,
        delay_row,
        mirrored,
    }
}

use Internetworking::*;
use LinkTech::*;

pub const HETERO_PATHS: [HeteroPath; 10] = [
    path(1, Dsrc, Arsu, Cv2x, 0, false),
    path(2, Dsrc, ArsuThenCloud, CellMqtt, 1, false),
    path(3, Cv2x, Arsu, Dsrc, 0, true),
    path(4, Cv2x, ArsuThenCloud, CellMqtt, 2, false),
    path(5, CellMqtt, CloudThenArsu, Cv2x, 2, true),
    path(6, CellMqtt, CloudThenArsu, Dsrc, 1, true),
    path(7, CellMqtt, Cloud, CellMqtt, 3, false),
    path(8, Camera, Arsu, Cv2x, 5, false),
    path(9, Camera, Arsu, Dsrc, 4, false),
    path(10, Camera, ArsuThenCloud, CellMqtt, 6, false),
];

/// Path a delivered message took.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum PathKind {
    /// Heterogeneous scenario by number.
    Hetero(u8),
    /// Same-technology peer-to-peer radio link.
    Direct(LinkTech),
}

impl PathKind {
    /// Looks up the heterogeneous scenario for an uplink/downlink pair.
    pub fn hetero(uplink: LinkTech, downlink: LinkTech) -> Option<PathKind> {
        HETERO_PATHS
            .iter()
            .find(|p| p.uplink == uplink && p.downlink == downlink)
            .map(|p| PathKind::Hetero(p.number))
    }

    pub fn info(self) -> Option<&'static HeteroPath> {
        match self {
            PathKind::Hetero(n) => HETERO_PATHS.iter().find(|p| p.number == n),
            PathKind::Direct(_) => None,
        }
    }
}

impl fmt::Display for PathKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathKind::Hetero(n) => {
                let p = self.info().expect("catalogued scenario");
                write!(f, "S{n} {} -> {} -> {}", p.uplink, p.via.label(), p.downlink)
            }
            PathKind::Direct(t) => write!(f, "direct {t} -> {t}"),
        }
    }
}
