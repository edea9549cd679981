use scraper::{Html, Selector};
use url::Url;

use crate::http::{HttpClient, HttpRequest};

/// Canonical form used to compare image URLs: parsed (which lowercases the
/// scheme and host), fragment removed, query kept.
pub fn normalize_url(raw: &str, base: Option<&Url>) -> Option<String> {
    let raw = raw.trim();
    let mut u = match base {
        Some(b) => b.join(raw).ok()?,
        None => Url::parse(raw).ok()?,
    };
    if !matches!(u.scheme(), "http" | "https") {
        return None;
    }
    u.set_fragment(None);
    Some(u.to_string())
}

/// Alt texts of every `<img>` in `html` whose resolved `src` equals
/// `image_url`, in document order with exact duplicates removed.
pub fn alt_texts_in(html: &str, page_url: &str, image_url: &str) -> Vec<String> {
    let Some(target) = normalize_url(image_url, None) else {
        return Vec::new();
    };
    let doc = Html::parse_document(html);
    let page = Url::parse(page_url).ok();
    let base_sel = Selector::parse("base[href]").expect("static selector");
    let base = doc
        .select(&base_sel)
        .next()
        .and_then(|b| b.value().attr("href"))
        .and_then(|href| match &page {
            Some(p) => p.join(href).ok(),
            None => Url::parse(href).ok(),
        })
        .or(page);
    let img_sel = Selector::parse("img").expect("static selector");
    let mut out: Vec<String> = Vec::new();
    for img in doc.select(&img_sel) {
        let el = img.value();
        let Some(src) = el.attr("src") else { continue };
        if normalize_url(src, base.as_ref()).as_deref() != Some(target.as_str()) {
            continue;
        }
        if let Some(alt) = el.attr("alt") {
            let alt = alt.trim();
            if !alt.is_empty() && !out.iter().any(|a| a == alt) {
                out.push(alt.to_string());
            }
        }
    }
    out
}

/// Fetch `page_url` and collect the alt texts of matching images. Fetch
/// failures give an empty list.
pub fn scrape_alt_texts(page_url: &str, image_url: &str, http: &dyn HttpClient) -> Vec<String> {
    match http.execute(&HttpRequest::get(page_url)) {
        Ok(resp) if resp.is_success() => alt_texts_in(&resp.text(), page_url, image_url),
        Ok(resp) => {
            log::info!("page {page_url} answered {}", resp.status);
            Vec::new()
        }
        Err(e) => {
            log::info!("page {page_url} unreachable: {e}");
            Vec::new()
        }
    }
}
