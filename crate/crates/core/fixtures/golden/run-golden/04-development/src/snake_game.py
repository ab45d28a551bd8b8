"""Terminal snake game.

Game logic lives in SnakeGame and has no terminal dependency. run_curses
draws it; run_headless plays a fixed number of ticks for automation.
"""

import curses
import random
import sys

UP, DOWN, LEFT, RIGHT = (0, -1), (0, 1), (-1, 0), (1, 0)


def is_opposite(a, b):
    """Return True when direction b points straight back along a."""
    return a[0] == -b[0] and a[1] == -b[1]


class SnakeGame:
    """State and rules of one snake game on a bounded board."""

    def __init__(self, width=20, height=20, rng=None):
        """Create a game; rng is injectable for deterministic tests."""
        self.width = width
        self.height = height
        self.rng = rng or random.Random()
        self.restart()

    def restart(self):
        """Reset snake, score and food to a new game."""
        self.snake = [(self.width // 2, self.height // 2)]
        self.direction = RIGHT
        self.score = 0
        self.over = False
        self.food = self._place_food()

    def _place_food(self):
        """Pick a random free cell for the next food item."""
        free = [(x, y) for x in range(self.width) for y in range(self.height) if (x, y) not in self.snake]
        return self.rng.choice(free)

    def turn(self, direction):
        """Change heading unless it would reverse the snake."""
        if len(self.snake) > 1 and is_opposite(self.direction, direction):
            return
        self.direction = direction

    def tick(self):
        """Advance the game by one step."""
        if self.over:
            return
        x, y = self.snake[0]
        head = (x + self.direction[0], y + self.direction[1])
        inside = 0 <= head[0] < self.width and 0 <= head[1] < self.height
        if not inside or head in self.snake:
            self.over = True
            return
        self.snake.insert(0, head)
        if head == self.food:
            self.score += 1
            self.food = self._place_food()
        else:
            self.snake.pop()


KEYS = {curses.KEY_UP: UP, curses.KEY_DOWN: DOWN, curses.KEY_LEFT: LEFT, curses.KEY_RIGHT: RIGHT}


def run_curses(screen):
    """Play interactively at ten ticks per second."""
    curses.curs_set(0)
    screen.timeout(100)
    game = SnakeGame()
    while True:
        key = screen.getch()
        if key in KEYS:
            game.turn(KEYS[key])
        elif key in (ord("r"), ord("R")) and game.over:
            game.restart()
        elif key in (ord("q"), ord("Q")):
            return
        game.tick()
        screen.erase()
        for x, y in game.snake:
            screen.addstr(y + 1, x * 2, "[]")
        screen.addstr(game.food[1] + 1, game.food[0] * 2, "()")
        status = "GAME OVER - R to restart" if game.over else ""
        screen.addstr(0, 0, "Score: %d %s" % (game.score, status))
        screen.refresh()


def run_headless(ticks):
    """Play a fixed number of ticks with a seeded generator and print the state."""
    game = SnakeGame(rng=random.Random(7))
    for _ in range(ticks):
        game.tick()
    print("ticks=%d score=%d length=%d over=%s" % (ticks, game.score, len(game.snake), game.over))


if __name__ == "__main__":
    if len(sys.argv) > 2 and sys.argv[1] == "--headless":
        run_headless(int(sys.argv[2]))
    else:
        curses.wrapper(run_curses)