use serde::{Deserialize, Serialize};
use url::Url;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    HtmlArticle,
    HtmlNonarticle,
    Pdf,
    Image,
    Audio,
    Video,
    Archive,
    Executable,
    Unknown,
}

impl ResourceKind {
    pub const NON_HTML: [ResourceKind; 7] = [
        ResourceKind::Pdf,
        ResourceKind::Image,
        ResourceKind::Audio,
        ResourceKind::Video,
        ResourceKind::Archive,
        ResourceKind::Executable,
        ResourceKind::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceKind::HtmlArticle => "html_article",
            ResourceKind::HtmlNonarticle => "html_nonarticle",
            ResourceKind::Pdf => "pdf",
            ResourceKind::Image => "image",
            ResourceKind::Audio => "audio",
            ResourceKind::Video => "video",
            ResourceKind::Archive => "archive",
            ResourceKind::Executable => "executable",
            ResourceKind::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            ResourceKind::HtmlArticle,
            ResourceKind::HtmlNonarticle,
            ResourceKind::Pdf,
            ResourceKind::Image,
            ResourceKind::Audio,
            ResourceKind::Video,
            ResourceKind::Archive,
            ResourceKind::Executable,
            ResourceKind::Unknown,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }

    pub fn is_html(self) -> bool {
        matches!(self, ResourceKind::HtmlArticle | ResourceKind::HtmlNonarticle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifiedVia {
    Header,
    Extension,
    MagicBytes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceClass {
    pub kind: ResourceKind,
    pub content_type: String,
    pub via: ClassifiedVia,
}

/// Coarse kind before the article/non-article split.
#[derive(Clone, Copy, PartialEq)]
enum Coarse {
    Html,
    Other(ResourceKind),
}

fn sniff(bytes: &[u8]) -> Option<(Coarse, &'static str)> {
    let starts = |sig: &[u8]| bytes.starts_with(sig);
    let at = |off: usize, sig: &[u8]| bytes.len() >= off + sig.len() && &bytes[off..off + sig.len()] == sig;
    use ResourceKind::*;
    let hit = if starts(b"%PDF-") {
        (Coarse::Other(Pdf), "application/pdf")
    } else if starts(b"\x89PNG\r\n\x1a\n") {
        (Coarse::Other(Image), "image/png")
    } else if starts(b"\xFF\xD8\xFF") {
        (Coarse::Other(Image), "image/jpeg")
    } else if starts(b"GIF87a") || starts(b"GIF89a") {
        (Coarse::Other(Image), "image/gif")
    } else if starts(b"RIFF") && at(8, b"WEBP") {
        (Coarse::Other(Image), "image/webp")
    } else if starts(b"RIFF") && at(8, b"WAVE") {
        (Coarse::Other(Audio), "audio/wav")
    } else if starts(b"ID3") || starts(b"\xFF\xFB") || starts(b"\xFF\xF3") || starts(b"\xFF\xF2") {
        (Coarse::Other(Audio), "audio/mpeg")
    } else if starts(b"OggS") {
        (Coarse::Other(Audio), "audio/ogg")
    } else if starts(b"fLaC") {
        (Coarse::Other(Audio), "audio/flac")
    } else if at(4, b"ftypM4A") {
        (Coarse::Other(Audio), "audio/mp4")
    } else if at(4, b"ftyp") {
        (Coarse::Other(Video), "video/mp4")
    } else if starts(b"\x1A\x45\xDF\xA3") {
        (Coarse::Other(Video), "video/webm")
    } else if starts(b"PK\x03\x04") {
        (Coarse::Other(Archive), "application/zip")
    } else if starts(b"\x1F\x8B") {
        (Coarse::Other(Archive), "application/gzip")
    } else if starts(b"Rar!\x1A\x07") {
        (Coarse::Other(Archive), "application/vnd.rar")
    } else if starts(b"7z\xBC\xAF\x27\x1C") {
        (Coarse::Other(Archive), "application/x-7z-compressed")
    } else if at(257, b"ustar") {
        (Coarse::Other(Archive), "application/x-tar")
    } else if starts(b"MZ") {
        (
            Coarse::Other(Executable),
            "application/vnd.microsoft.portable-executable",
        )
    } else if starts(b"\x7FELF") {
        (Coarse::Other(Executable), "application/x-executable")
    } else if starts(b"\xCF\xFA\xED\xFE") || starts(b"\xCE\xFA\xED\xFE") {
        (Coarse::Other(Executable), "application/x-mach-binary")
    } else if looks_like_html(bytes) {
        (Coarse::Html, "text/html")
    } else {
        return None;
    };
    Some(hit)
}

fn looks_like_html(bytes: &[u8]) -> bool {
    let head = &bytes[..bytes.len().min(1024)];
    let text = String::from_utf8_lossy(head);
    let t = text.trim_start_matches('\u{feff}').trim_start().to_ascii_lowercase();
    ["<!doctype html", "<html", "<head", "<body"]
        .iter()
        .any(|p| t.starts_with(p))
}

fn from_content_type(ct: &str) -> Option<Coarse> {
    let mime = ct.split(';').next().unwrap_or("").trim().to_ascii_lowercase();
    use ResourceKind::*;
    let c = match mime.as_str() {
        "text/html" | "application/xhtml+xml" => Coarse::Html,
        "application/pdf" | "application/x-pdf" => Coarse::Other(Pdf),
        "application/zip"
        | "application/x-zip-compressed"
        | "application/gzip"
        | "application/x-gzip"
        | "application/x-tar"
        | "application/x-bzip2"
        | "application/vnd.rar"
        | "application/x-rar-compressed"
        | "application/x-7z-compressed" => Coarse::Other(Archive),
        "application/x-msdownload"
        | "application/x-msdos-program"
        | "application/x-dosexec"
        | "application/vnd.microsoft.portable-executable"
        | "application/x-executable"
        | "application/x-elf"
        | "application/x-mach-binary"
        | "application/vnd.android.package-archive" => Coarse::Other(Executable),
        m if m.starts_with("image/") => Coarse::Other(Image),
        m if m.starts_with("audio/") => Coarse::Other(Audio),
        m if m.starts_with("video/") => Coarse::Other(Video),
        _ => return None,
    };
    Some(c)
}

fn from_extension(url: &Url) -> Option<(Coarse, &'static str)> {
    let last = url.path_segments()?.next_back()?.to_ascii_lowercase();
    let ext = last.rsplit_once('.')?.1.to_string();
    use ResourceKind::*;
    let hit = match ext.as_str() {
        "html" | "htm" | "shtml" | "xhtml" | "php" | "asp" | "aspx" | "jsp" => (Coarse::Html, "text/html"),
        "pdf" => (Coarse::Other(Pdf), "application/pdf"),
        "jpg" | "jpeg" | "png" | "gif" | "webp" | "svg" | "bmp" | "tif" | "tiff" => (Coarse::Other(Image), "image/*"),
        "mp3" | "wav" | "ogg" | "oga" | "m4a" | "flac" | "aac" | "opus" => (Coarse::Other(Audio), "audio/*"),
        "mp4" | "m4v" | "mov" | "avi" | "mkv" | "webm" | "wmv" | "flv" => (Coarse::Other(Video), "video/*"),
        "zip" | "rar" | "7z" | "gz" | "tgz" | "tar" | "bz2" | "xz" => (Coarse::Other(Archive), "application/zip"),
        "exe" | "msi" | "dmg" | "apk" | "bat" | "cmd" | "com" | "scr" => {
            (Coarse::Other(Executable), "application/x-msdownload")
        }
        _ => return None,
    };
    Some(hit)
}

fn has_article_markers(bytes: &[u8]) -> bool {
    let text = String::from_utf8_lossy(bytes).to_ascii_lowercase();
    text.contains("<article")
        || text.contains("og:type\" content=\"article")
        || text.contains("article:published_time")
        || text.contains("schema.org/newsarticle")
}

/// Classifies a fetched resource. Magic bytes win over the Content-Type
/// header, which wins over the URL extension. HTML with article markers
/// (or with no body to inspect) is an article candidate.
pub fn classify_resource(url: &Url, content_type: Option<&str>, first_bytes: Option<&[u8]>) -> ResourceClass {
    let header = content_type.map(str::trim).filter(|s| !s.is_empty());
    let decided = first_bytes
        .and_then(sniff)
        .map(|(c, mime)| (c, mime.to_string(), ClassifiedVia::MagicBytes))
        .or_else(|| header.and_then(|ct| from_content_type(ct).map(|c| (c, ct.to_string(), ClassifiedVia::Header))))
        .or_else(|| {
            from_extension(url).map(|(c, mime)| (c, header.unwrap_or(mime).to_string(), ClassifiedVia::Extension))
        });

    match decided {
        Some((Coarse::Other(kind), ct, via)) => ResourceClass {
            kind,
            content_type: ct,
            via,
        },
        Some((Coarse::Html, ct, via)) => {
            let article = match first_bytes {
                Some(b) if !b.is_empty() => has_article_markers(b),
                _ => true,
            };
            ResourceClass {
                kind: if article {
                    ResourceKind::HtmlArticle
                } else {
                    ResourceKind::HtmlNonarticle
                },
                content_type: ct,
                via,
            }
        }
        None => ResourceClass {
            kind: ResourceKind::Unknown,
            content_type: header.unwrap_or("application/octet-stream").to_string(),
            via: if header.is_some() {
                ClassifiedVia::Header
            } else {
                ClassifiedVia::Extension
            },
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u(s: &str) -> Url {
        Url::parse(s).unwrap()
    }

    #[test]
    fn pdf_by_magic_beats_header() {
        let c = classify_resource(&u("http://x.org/a"), Some("text/html"), Some(b"%PDF-1.7\n..."));
        assert_eq!(c.kind, ResourceKind::Pdf);
        assert_eq!(c.via, ClassifiedVia::MagicBytes);
    }

    #[test]
    fn html_header_with_html_path() {
        let c = classify_resource(&u("http://x.org/a.html"), Some("text/html; charset=utf-8"), None);
        assert_eq!(c.kind, ResourceKind::HtmlArticle);
        assert_eq!(c.via, ClassifiedVia::Header);
    }

    #[test]
    fn zip_header_is_archive() {
        let c = classify_resource(&u("http://x.org/dl"), Some("application/zip"), None);
        assert_eq!(c.kind, ResourceKind::Archive);
    }

    #[test]
    fn extension_fallback() {
        let c = classify_resource(&u("http://x.org/f/setup.EXE"), Some("application/octet-stream"), None);
        assert_eq!(c.kind, ResourceKind::Executable);
        assert_eq!(c.via, ClassifiedVia::Extension);
        let c = classify_resource(&u("http://x.org/paper.pdf"), None, Some(b""));
        assert_eq!(c.kind, ResourceKind::Pdf);
    }

    #[test]
    fn each_signature() {
        let cases: &[(&[u8], ResourceKind)] = &[
            (b"\x89PNG\r\n\x1a\nxxxx", ResourceKind::Image),
            (b"\xFF\xD8\xFF\xE0", ResourceKind::Image),
            (b"ID3\x04\x00", ResourceKind::Audio),
            (b"\x00\x00\x00\x18ftypmp42", ResourceKind::Video),
            (b"\x00\x00\x00\x18ftypM4A ", ResourceKind::Audio),
            (b"PK\x03\x04rest", ResourceKind::Archive),
            (b"MZ\x90\x00", ResourceKind::Executable),
            (b"\x7FELF\x02", ResourceKind::Executable),
        ];
        for (bytes, kind) in cases {
            let c = classify_resource(&u("http://x.org/z"), None, Some(bytes));
            assert_eq!(c.kind, *kind, "{bytes:?}");
        }
    }

    #[test]
    fn html_without_markers_is_nonarticle() {
        let c = classify_resource(
            &u("http://x.org/"),
            Some("text/html"),
            Some(b"<!DOCTYPE html><html><body><ul><li>x</li></ul></body></html>"),
        );
        assert_eq!(c.kind, ResourceKind::HtmlNonarticle);
        let c = classify_resource(
            &u("http://x.org/"),
            None,
            Some(b"<html><body><article><p>x</p></article></body></html>"),
        );
        assert_eq!((c.kind, c.via), (ResourceKind::HtmlArticle, ClassifiedVia::MagicBytes));
    }

    #[test]
    fn nothing_known() {
        let c = classify_resource(
            &u("http://x.org/blob"),
            Some("application/octet-stream"),
            Some(b"\x00\x01"),
        );
        assert_eq!(c.kind, ResourceKind::Unknown);
    }
}
