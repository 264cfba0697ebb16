// Wire-format and manifest types shared with the collector.

export interface ApiManifestDoc {
  format: string;
  version: number;
  signals: Record<string, string[]>;
  vocabulary: string[];
  custom_features: [string, string][];
}

export interface ApiAggregateLine {
  name: string;
  calls: number;
  distinct_str_args: number;
  max_str_len: number;
  sum_str_len: number;
  list_ret_len_sum: number;
}

export interface TelemetryLine {
  script_id: string;
  script_url: string;
  page_url: string;
  site: string;
  frame_depth: number;
  apis: ApiAggregateLine[];
}

export interface PageContext {
  pageUrl: string;
  site: string;
  frameDepth: number;
}

export interface AllowlistDoc {
  sites: string[];
}
