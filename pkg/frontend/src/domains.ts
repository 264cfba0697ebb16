// Registrable-domain extraction and site allowlisting.  Mirrors the
// collector's compact suffix table so both sides compute the same site.

const MULTI_SUFFIXES = new Set([
  "ac.il", "ac.th", "ac.uk", "co.at", "co.id", "co.il", "co.in",
  "co.jp", "co.kr", "co.nz", "co.th", "co.uk", "co.za", "com.ar",
  "com.au", "com.bd", "com.br", "com.cn", "com.co", "com.eg",
  "com.hk", "com.mx", "com.my", "com.pe", "com.ph", "com.pk",
  "com.pl", "com.sa", "com.sg", "com.tr", "com.tw", "com.ve",
  "com.vn", "edu.au", "edu.cn", "gov.au", "gov.br", "gov.cn",
  "gov.uk", "ne.jp", "net.au", "net.br", "net.cn", "net.pl",
  "or.at", "or.jp", "or.th", "org.au", "org.br", "org.cn",
  "org.il", "org.pl", "org.uk",
]);

export function registrableDomain(urlOrHost: string): string {
  let host = urlOrHost;
  if (urlOrHost.includes("//")) {
    try {
      host = new URL(urlOrHost).hostname;
    } catch {
      host = urlOrHost;
    }
  }
  host = host.trim().replace(/^\.+|\.+$/g, "").toLowerCase();
  const labels = host.split(".");
  if (labels.length <= 2 || labels.every((l) => /^\d+$/.test(l))) {
    return host;
  }
  if (MULTI_SUFFIXES.has(labels.slice(-2).join("."))) {
    return labels.slice(-3).join(".");
  }
  return labels.slice(-2).join(".");
}

export function siteAllowed(site: string, allowlist: string[]): boolean {
  return allowlist.includes(site);
}
