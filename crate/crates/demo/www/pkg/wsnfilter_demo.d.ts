/* tslint:disable */
/* eslint-disable */

/**
 * Mean error and variance against a uniform link probability `q`.
 */
export function accuracy(nodes: number, order: number, mu: number, trials: number, seed: number): string;

/**
 * Noisy smooth field on a square grid, denoised under each scheduler.
 */
export function denoise(side: number, order: number, noise_std: number, trials: number, seed: number): string;

/**
 * Random deployment scheduled with CDSA: positions, edges and slots.
 */
export function network(nodes: number, side_len: number, r_broadcast: number, seed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly accuracy: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly denoise: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly network: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
